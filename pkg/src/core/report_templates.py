import os
from typing import Any, Dict, List, Optional

import yaml
from jinja2 import Template


def fmt_rate(value: Optional[float], digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def md_cell(text: Any) -> str:
    return str(text).replace("|", "\\|").replace("\n", " ")


class ReportTemplateManager:
    """
    Report template manager:
    - Loads YAML templates from the templates directory
    - Supports `inherits` (single-level) via '{{ super }}' placeholder
    - Renders templates with Jinja2 using a variables dict
    - Supports task variants: 'variants/<template>__<variant>.yaml'
    """

    def __init__(self, templates_dir: Optional[str] = None):
        self.base_dir = templates_dir or os.path.abspath(
            os.path.join(os.path.dirname(__file__), "..", "templates")
        )
        self._templates: Dict[str, Dict[str, Any]] = {}
        self._load_templates()
        self._resolve_inheritance()

    @property
    def templates(self):
        return self._templates

    def _load_templates(self):
        for root, _, files in os.walk(self.base_dir):
            for fname in sorted(files):
                if not fname.endswith((".yaml", ".yml")):
                    continue
                full = os.path.join(root, fname)
                key = os.path.relpath(full, self.base_dir).replace(os.sep, "/").rsplit(".", 1)[0]
                with open(full, "r", encoding="utf-8") as f:
                    data = yaml.safe_load(f) or {}
                meta = {k: v for k, v in data.items() if k not in ("template", "inherits")}
                self._templates[key] = {
                    "template": data.get("template", ""),
                    "inherits": data.get("inherits"),
                    "meta": meta,
                }

    def _resolve_inheritance(self):
        for key, info in list(self._templates.items()):
            parent = info.get("inherits")
            if not parent:
                continue
            parent_info = self._templates.get(parent)
            if parent_info is None:
                raise FileNotFoundError(f"template {key!r} inherits missing template {parent!r}")
            info["template"] = info["template"].replace("{{ super }}", parent_info["template"])

    def _candidates(self, name: str, variant: Optional[str]) -> List[str]:
        candidates = []
        if variant:
            candidates.append(f"variants/{name}__{variant}")
        candidates.append(name)
        return candidates

    def render(self, name: str, variables: Dict[str, Any], variant: Optional[str] = None) -> str:
        """Render `name` (or its variant) with the formatting helpers in scope."""
        candidates = self._candidates(name, variant)
        template_text = None
        for candidate in candidates:
            info = self._templates.get(candidate)
            if info and info.get("template"):
                template_text = info["template"]
                break
        if not template_text:
            raise FileNotFoundError(f"No report template found for keys: {candidates}")

        scope = {"fmt": fmt_rate, "cell": md_cell}
        scope.update(variables)
        return Template(template_text, keep_trailing_newline=True, trim_blocks=True, lstrip_blocks=True).render(**scope)
