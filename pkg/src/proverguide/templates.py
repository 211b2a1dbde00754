"""Prompt templates: strict placeholder rendering and asset loading.

Templates ship as text files under ``proverguide/prompts/`` and can be
overridden per run by pointing the config's ``template_dir`` at a
directory containing files with the same names.
"""

from __future__ import annotations

import os
import string
from dataclasses import dataclass
from importlib import resources
from typing import Dict, FrozenSet, Optional

TEMPLATE_IDS = (
    "nl_proof",
    "summarize_system",
    "summarize_user",
    "select_system",
    "select_user",
    "lemma_proofs_system",
    "lemma_proofs_user",
    "prover_cot",
)


class MissingBindingError(KeyError):
    def __init__(self, template_id: str, missing):
        self.template_id = template_id
        self.missing = tuple(missing)
        super().__init__(
            f"template {template_id!r} missing bindings: {', '.join(self.missing)}"
        )


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    text: str

    def placeholders(self) -> FrozenSet[str]:
        fields = set()
        for _, name, _, _ in string.Formatter().parse(self.text):
            if name is not None:
                if not name.isidentifier():
                    raise ValueError(
                        f"template {self.template_id!r} has a malformed"
                        f" placeholder {name!r}"
                    )
                fields.add(name)
        return frozenset(fields)

    def render(self, **bindings: str) -> str:
        needed = self.placeholders()
        missing = sorted(needed - bindings.keys())
        if missing:
            raise MissingBindingError(self.template_id, missing)
        return self.text.format(**{k: bindings[k] for k in needed})


class TemplateSet:
    def __init__(self, templates: Dict[str, PromptTemplate]):
        missing = [tid for tid in TEMPLATE_IDS if tid not in templates]
        if missing:
            raise ValueError(f"missing templates: {', '.join(missing)}")
        self._templates = dict(templates)

    def get(self, template_id: str) -> PromptTemplate:
        return self._templates[template_id]

    def render(self, template_id: str, **bindings: str) -> str:
        return self.get(template_id).render(**bindings)

    @classmethod
    def load(cls, override_dir: Optional[str] = None) -> "TemplateSet":
        templates: Dict[str, PromptTemplate] = {}
        assets = resources.files("proverguide").joinpath("prompts")
        for tid in TEMPLATE_IDS:
            text = assets.joinpath(tid + ".txt").read_text(encoding="utf-8")
            if override_dir is not None:
                candidate = os.path.join(override_dir, tid + ".txt")
                if os.path.exists(candidate):
                    with open(candidate, "r", encoding="utf-8") as fh:
                        text = fh.read()
            templates[tid] = PromptTemplate(tid, text)
        return cls(templates)
