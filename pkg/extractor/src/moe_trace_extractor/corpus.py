"""Built-in evaluation corpus: fifty short public-domain passages.

The exact texts behind published MoE routing analyses are rarely released,
so runs over this fixed corpus are reproducible even though they cannot
match any external study word for word.  Every passage here predates 1929
and is in the public domain.  Use ``moe-trace-extract --texts your.txt``
to substitute a corpus of your own (one document per line).
"""

DEFAULT_TEXTS = [
    "It is a truth universally acknowledged, that a single man in possession of a good fortune, must be in want of a wife.",
    "Call me Ishmael. Some years ago, never mind how long precisely, having little or no money in my purse, I thought I would sail about a little and see the watery part of the world.",
    "It was the best of times, it was the worst of times, it was the age of wisdom, it was the age of foolishness.",
    "Happy families are all alike; every unhappy family is unhappy in its own way.",
    "Whether I shall turn out to be the hero of my own life, or whether that station will be held by anybody else, these pages must show.",
    "You don't know about me without you have read a book by the name of The Adventures of Tom Sawyer; but that ain't no matter.",
    "Once upon a midnight dreary, while I pondered, weak and weary, over many a quaint and curious volume of forgotten lore.",
    "Two roads diverged in a yellow wood, and sorry I could not travel both and be one traveler, long I stood.",
    "Mrs. Dalloway said she would buy the flowers herself.",
    "There was no possibility of taking a walk that day. We had been wandering, indeed, in the leafless shrubbery an hour in the morning.",
    "In my younger and more vulnerable years my father gave me some advice that I have been turning over in my mind ever since.",
    "The cold passed reluctantly from the earth, and the retiring fogs revealed an army stretched out on the hills, resting.",
    "Alice was beginning to get very tired of sitting by her sister on the bank, and of having nothing to do.",
    "A wide plain, where the broadening Floss hurries on between its green banks to the sea.",
    "On an exceptionally hot evening early in July a young man came out of the garret in which he lodged and walked slowly towards the bridge.",
    "No one would have believed in the last years of the nineteenth century that this world was being watched keenly and closely by intelligences greater than man's.",
    "Marley was dead: to begin with. There is no doubt whatever about that.",
    "The year 1866 was signalised by a remarkable incident, a mysterious and puzzling phenomenon, which doubtless no one has yet forgotten.",
    "It was seven o'clock of a very warm evening in the Seeonee hills when Father Wolf woke up from his day's rest.",
    "Ships at a distance have every man's wish on board. For some they come in with the tide.",
    "True! nervous, very, very dreadfully nervous I had been and am; but why will you say that I am mad?",
    "As I walked through the wilderness of this world, I lighted on a certain place where was a den, and laid me down in that place to sleep.",
    "I will begin the story of my adventures with a certain morning early in the month of June, the year of grace 1751.",
    "Squire Trelawney, Dr. Livesey, and the rest of these gentlemen having asked me to write down the whole particulars about Treasure Island, I take up my pen.",
    "My father's family name being Pirrip, and my Christian name Philip, my infant tongue could make of both names nothing longer or more explicit than Pip.",
    "The Mole had been working very hard all the morning, spring-cleaning his little home.",
    "In the year 1878 I took my degree of Doctor of Medicine of the University of London, and proceeded to Netley to go through the course prescribed for surgeons in the army.",
    "You will rejoice to hear that no disaster has accompanied the commencement of an enterprise which you have regarded with such evil forebodings.",
    "I am by birth a Genevese, and my family is one of the most distinguished of that republic.",
    "Buck did not read the newspapers, or he would have known that trouble was brewing, not alone for himself, but for every tide-water dog.",
    "When Mary Lennox was sent to Misselthwaite Manor to live with her uncle everybody said she was the most disagreeable-looking child ever seen.",
    "Dorothy lived in the midst of the great Kansas prairies, with Uncle Henry, who was a farmer, and Aunt Em, who was the farmer's wife.",
    "Christmas won't be Christmas without any presents, grumbled Jo, lying on the rug.",
    "Under certain circumstances there are few hours in life more agreeable than the hour dedicated to the ceremony known as afternoon tea.",
    "The schoolmaster was leaving the village, and everybody seemed sorry.",
    "I sing of arms and the man, who first from the shores of Troy came, fated an exile, to Italy and the Lavinian coast.",
    "Tell me, O muse, of that ingenious hero who travelled far and wide after he had sacked the famous town of Troy.",
    "In a village of La Mancha, the name of which I have no desire to call to mind, there lived not long since one of those gentlemen that keep a lance in the lance-rack.",
    "On the 24th of February, 1815, the look-out at Notre-Dame de la Garde signalled the three-master, the Pharaon from Smyrna, Trieste, and Naples.",
    "So long as there shall exist, by virtue of law and custom, decrees of damnation pronounced by society, books of this nature cannot be useless.",
    "I celebrate myself, and sing myself, and what I assume you shall assume, for every atom belonging to me as good belongs to you.",
    "A cold coming we had of it, just the worst time of the year for a journey, and such a long journey.",
    "It was the schooner Hesperus, that sailed the wintry sea; and the skipper had taken his little daughter, to bear him company.",
    "When I consider how my light is spent, ere half my days, in this dark world and wide.",
    "The apparition of these faces in the crowd; petals on a wet, black bough.",
    "April is the cruellest month, breeding lilacs out of the dead land, mixing memory and desire.",
    "The sea is calm to-night. The tide is full, the moon lies fair upon the straits.",
    "My heart aches, and a drowsy numbness pains my sense, as though of hemlock I had drunk.",
    "Shall I compare thee to a summer's day? Thou art more lovely and more temperate.",
    "Of man's first disobedience, and the fruit of that forbidden tree whose mortal taste brought death into the world, and all our woe.",
]
