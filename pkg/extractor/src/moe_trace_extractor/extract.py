"""Capture per-token router gate logits from MoE checkpoints.

Routers are discovered generically: any module whose name ends in "gate"
or mentions "router" and whose weight (or Linear out_features) maps hidden
states to one score per expert.  Forward hooks grab the pre-softmax logits;
tuple outputs (newer transformers return (logits, scores, indices)) are
searched for the first float tensor with an expert-count last axis.

Extraction runs text by text on a single thread in float32 eval mode, so
repeated runs over the same weights and texts are bit-identical.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .moer import manifest_line, write_moer


class UnsupportedModelError(RuntimeError):
    """The model exposes no discoverable per-layer router."""


@dataclass
class ExtractionJob:
    """One extraction run over a hub model and a text file."""

    model_id: str
    texts_file: str | Path
    output_dir: str | Path
    revisions: list[str] = field(default_factory=list)
    max_tokens_per_text: int | None = 673
    max_total_tokens: int | None = None
    device: str = "cpu"


@dataclass(frozen=True)
class RouterSpec:
    m: int
    k: int
    alpha: float | None


_EXPERT_COUNT_ATTRS = ("num_experts", "num_local_experts", "n_routed_experts")
_TOP_K_ATTRS = ("num_experts_per_tok", "num_selected_experts", "moe_top_k", "top_k")
_ALPHA_ATTRS = ("router_aux_loss_coef", "aux_loss_alpha", "router_aux_loss_alpha")


def router_spec_from_config(config) -> RouterSpec:
    m = next((getattr(config, a) for a in _EXPERT_COUNT_ATTRS
              if getattr(config, a, None)), None)
    if m is None:
        raise UnsupportedModelError(
            f"config {type(config).__name__} declares no expert count "
            f"(looked for {_EXPERT_COUNT_ATTRS})")
    k = next((getattr(config, a) for a in _TOP_K_ATTRS if getattr(config, a, None)), None)
    if k is None:
        raise UnsupportedModelError(
            f"config {type(config).__name__} declares no routing width "
            f"(looked for {_TOP_K_ATTRS})")
    alpha = next((getattr(config, a) for a in _ALPHA_ATTRS
                  if getattr(config, a, None) is not None), None)
    return RouterSpec(m=int(m), k=int(k), alpha=None if alpha is None else float(alpha))


def find_router_modules(model: nn.Module, m: int) -> list[tuple[str, nn.Module]]:
    """Router modules in layer order; raises when none are discoverable."""
    routers = []
    for name, module in model.named_modules():
        leaf = name.rsplit(".", 1)[-1]
        if not (leaf == "gate" or "router" in leaf.lower()):
            continue
        weight = getattr(module, "weight", None)
        if isinstance(module, nn.Linear) and module.out_features == m:
            routers.append((name, module))
        elif weight is not None and weight.ndim == 2 and weight.shape[0] == m:
            routers.append((name, module))
    if not routers:
        raise UnsupportedModelError(
            f"no router modules found for M={m} experts; the architecture is unsupported")
    return routers


def _logits_from_output(output, m: int) -> torch.Tensor:
    candidates = [output] if torch.is_tensor(output) else list(output)
    for tensor in candidates:
        if (torch.is_tensor(tensor) and tensor.dtype.is_floating_point
                and tensor.ndim >= 1 and tensor.shape[-1] == m):
            return tensor.detach().to(torch.float32).reshape(-1, m)
    raise UnsupportedModelError(
        f"router output carries no (tokens, {m}) float logits tensor")


def extract_from_model(model: nn.Module, tokenizer, texts,
                       max_tokens_per_text: int | None = 673,
                       max_total_tokens: int | None = None,
                       device: str = "cpu"):
    """Run texts through the model, capturing router logits per layer.

    Returns (logits (T, L, M) float32 array, batch boundaries, RouterSpec).
    Batch boundaries delimit texts; empty texts are skipped.
    """
    spec = router_spec_from_config(model.config)
    routers = find_router_modules(model, spec.m)

    torch.set_num_threads(1)  # reduction order fixed -> bit-identical runs
    model = model.to(device).eval()

    captured: list[list[torch.Tensor]] = [[] for _ in routers]
    handles = []
    for slot, (_, module) in enumerate(routers):
        def hook(mod, args, output, slot=slot):
            captured[slot].append(_logits_from_output(output, spec.m))
        handles.append(module.register_forward_hook(hook))

    blocks = []
    boundaries = [0]
    total = 0
    try:
        with torch.no_grad():
            for text in texts:
                if not text.strip():
                    continue
                if max_total_tokens is not None and total >= max_total_tokens:
                    break
                kwargs = {"return_tensors": "pt"}
                if max_tokens_per_text is not None:
                    kwargs.update(truncation=True, max_length=max_tokens_per_text)
                ids = tokenizer(text, **kwargs)["input_ids"].to(device)
                if ids.numel() == 0:
                    continue
                if max_total_tokens is not None:
                    budget = max_total_tokens - total
                    ids = ids[:, :budget]
                for slot_list in captured:
                    slot_list.clear()
                model(input_ids=ids)
                per_layer = []
                for name_module, slot_list in zip(routers, captured):
                    if len(slot_list) != 1:
                        raise UnsupportedModelError(
                            f"router {name_module[0]} fired {len(slot_list)} times in one "
                            "forward; expected exactly once")
                    per_layer.append(slot_list[0])
                seq = per_layer[0].shape[0]
                if any(t.shape[0] != seq for t in per_layer):
                    raise UnsupportedModelError("routers disagree on token count")
                blocks.append(torch.stack(per_layer, dim=1).cpu().numpy())
                total += seq
                boundaries.append(total)
    finally:
        for handle in handles:
            handle.remove()
    if not blocks:
        raise ValueError("no non-empty texts to extract")
    logits = np.concatenate(blocks, axis=0).astype(np.float32)
    return logits, boundaries, spec


STEP_PATTERN = re.compile(r"step[-_]?(\d+)", re.IGNORECASE)


def step_from_revision(revision: str, fallback: int) -> int:
    """Training step parsed from a revision tag like 'step10000-tokens41B'."""
    match = STEP_PATTERN.search(revision)
    return int(match.group(1)) if match else fallback


@dataclass(frozen=True)
class RevisionResult:
    revision: str
    step: int
    path: str | None
    tokens: int = 0
    error: str | None = None


def extract(job: ExtractionJob, lam: float = 1.0) -> list[RevisionResult]:
    """Extract every requested revision of a hub model to MOER files.

    Writes one trace per revision plus a series manifest into the output
    directory.  Failures are recorded per revision; the manifest lists the
    successes.
    """
    from transformers import AutoModelForCausalLM, AutoTokenizer

    texts = [line.rstrip("\n") for line in Path(job.texts_file).read_text().splitlines()]
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    revisions = job.revisions or [None]

    results = []
    lines = []
    for index, revision in enumerate(revisions):
        tag = revision or "main"
        step = step_from_revision(tag, fallback=index)
        try:
            tokenizer = AutoTokenizer.from_pretrained(job.model_id, revision=revision)
            model = AutoModelForCausalLM.from_pretrained(
                job.model_id, revision=revision, torch_dtype=torch.float32)
            logits, boundaries, spec = extract_from_model(
                model, tokenizer, texts,
                max_tokens_per_text=job.max_tokens_per_text,
                max_total_tokens=job.max_total_tokens,
                device=job.device)
            del model
            name = f"step{step:08d}.moer"
            write_moer(out_dir / name, logits, spec.k, lam=lam, alpha=spec.alpha,
                       batch_boundaries=boundaries)
            lines.append(manifest_line(step, logits.shape[0], name, spec.alpha,
                                       logits.shape[2], spec.k))
            results.append(RevisionResult(revision=tag, step=step, path=name,
                                          tokens=logits.shape[0]))
        except UnsupportedModelError:
            raise
        except Exception as exc:  # download/auth errors surface verbatim per revision
            results.append(RevisionResult(revision=tag, step=step, path=None,
                                          error=f"{type(exc).__name__}: {exc}"))
    if lines:
        (out_dir / "series.manifest").write_text(
            "# step tokens path alpha M K\n" + "\n".join(lines) + "\n")
    return results
