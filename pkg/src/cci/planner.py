"""Outline planning: numbered two-level plan parsed into a validated tree.

The prompt asks for soft bounds (preferred max children); the validator
enforces the hard ones. Leaves in depth-first order define drafting order.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .errors import ConfigError, OutlineShapeError, ParseError
from .imagination import StoryElements, format_name_description
from .providers.base import ChatProvider
from .providers.types import ChatRequest
from .specification import MainPlotSpec, Persona

log = logging.getLogger(__name__)

_OUTLINE_LINE = re.compile(r"^\s*(\d+(?:\.\d+)*)[.)]?\s+(.*\S)\s*$")

BUILD_REPROMPTS = 2


@dataclass(frozen=True)
class OutlineParams:
    max_depth: int = 2
    min_children: int = 2
    preferred_max_children: int = 4
    max_children: int = 5
    min_passages_per_node: int = 1
    max_passages_per_node: int = 2

    def __post_init__(self):
        if not (1 <= self.min_children <= self.preferred_max_children <= self.max_children):
            raise ConfigError(
                "child bounds must satisfy 1 <= min <= preferred_max <= max, got "
                f"{self.min_children}/{self.preferred_max_children}/{self.max_children}"
            )
        if not (1 <= self.min_passages_per_node <= self.max_passages_per_node):
            raise ConfigError(
                "passage bounds must satisfy 1 <= min <= max, got "
                f"{self.min_passages_per_node}/{self.max_passages_per_node}"
            )
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_children": self.min_children,
            "preferred_max_children": self.preferred_max_children,
            "max_children": self.max_children,
            "min_passages_per_node": self.min_passages_per_node,
            "max_passages_per_node": self.max_passages_per_node,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OutlineParams":
        return cls(**data)


@dataclass
class OutlineNode:
    id: str
    summary: str
    depth: int
    children: list["OutlineNode"] = field(default_factory=list)

    def is_leaf(self) -> bool:
        return not self.children

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "summary": self.summary,
            "children": [c.to_dict() for c in self.children],
        }

    @classmethod
    def from_dict(cls, data: dict, depth: int = 0) -> "OutlineNode":
        return cls(
            id=data["id"],
            summary=data["summary"],
            depth=depth,
            children=[cls.from_dict(c, depth + 1) for c in data.get("children", [])],
        )


@dataclass
class OutlineTree:
    root: OutlineNode
    params: OutlineParams

    def leaves(self) -> list[OutlineNode]:
        """Leaves in depth-first order; this is the drafting order."""
        out: list[OutlineNode] = []

        def walk(node: OutlineNode) -> None:
            if node.is_leaf():
                if node is not self.root:
                    out.append(node)
                return
            for child in node.children:
                walk(child)

        walk(self.root)
        return out

    def to_dict(self) -> dict:
        return {"root": self.root.to_dict(), "params": self.params.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "OutlineTree":
        return cls(
            root=OutlineNode.from_dict(data["root"]),
            params=OutlineParams.from_dict(data["params"]),
        )


def parse_outline(text: str, params: OutlineParams) -> OutlineTree:
    """Parse a numbered two-level listing ("1. ...", "1.1 ...") into a tree."""
    root = OutlineNode(id="", summary="", depth=0)
    nodes: dict[str, OutlineNode] = {"": root}
    for line in text.splitlines():
        match = _OUTLINE_LINE.match(line)
        if not match:
            continue
        node_id = match.group(1).rstrip(".")
        summary = match.group(2).strip()
        if node_id in nodes:
            raise ParseError(f"duplicate outline id {node_id!r}")
        parent_id = node_id.rsplit(".", 1)[0] if "." in node_id else ""
        parent = nodes.get(parent_id)
        if parent is None:
            raise ParseError(f"outline id {node_id!r} has no parent {parent_id!r}")
        node = OutlineNode(id=node_id, summary=summary, depth=parent.depth + 1)
        parent.children.append(node)
        nodes[node_id] = node
    if not root.children:
        raise ParseError("no outline items found in reply")
    return OutlineTree(root=root, params=params)


def validate_outline(tree: OutlineTree, params: OutlineParams | None = None) -> None:
    """Structural check only: depth bound, child-count bounds, id discipline."""
    params = params or tree.params
    seen: set[str] = set()

    def walk(node: OutlineNode) -> None:
        if node.id in seen:
            raise OutlineShapeError(f"duplicate node id {node.id!r}", node_id=node.id)
        seen.add(node.id)
        if node.depth > params.max_depth:
            raise OutlineShapeError(
                f"node {node.id!r} at depth {node.depth} exceeds max depth {params.max_depth}",
                node_id=node.id,
            )
        if node.children:
            count = len(node.children)
            if not (params.min_children <= count <= params.max_children):
                raise OutlineShapeError(
                    f"node {node.id or 'root'!r} has {count} children, "
                    f"allowed range is [{params.min_children}, {params.max_children}]",
                    node_id=node.id,
                )
            for position, child in enumerate(node.children, start=1):
                expected = f"{node.id}.{position}" if node.id else str(position)
                if child.id != expected:
                    raise OutlineShapeError(
                        f"node id {child.id!r} does not match its position ({expected!r})",
                        node_id=child.id,
                    )
                if child.depth != node.depth + 1:
                    raise OutlineShapeError(
                        f"node {child.id!r} has inconsistent depth {child.depth}",
                        node_id=child.id,
                    )
                walk(child)

    walk(tree.root)


_SHAPE_REMINDER = (
    "\nYour previous outline was rejected: {reason}\n"
    "Rewrite it. Use only two levels. Number top-level sections 1., 2., ... and "
    "sub-points 1.1, 1.2, ... Every section must have between {lo} and {hi} "
    "sub-points, and there must be between {lo} and {hi} sections."
)


def build_outline(
    elements: StoryElements,
    persona: Persona,
    plot: MainPlotSpec,
    params: OutlineParams,
    chat: ChatProvider,
) -> OutlineTree:
    """Prompt for the plan, parse, validate; re-prompt on shape violations."""
    characters = format_name_description(persona.name, elements.character.description)
    prompt = prompts.render(
        "plan/outline",
        main_plot=plot.summary_5_sentences,
        background=elements.background.description,
        characters=characters,
        name=persona.name,
        min_children=str(params.min_children),
        preferred_max_children=str(params.preferred_max_children),
    )
    last_error: Exception | None = None
    for attempt in range(BUILD_REPROMPTS + 1):
        suffix = ""
        if attempt and last_error is not None:
            suffix = _SHAPE_REMINDER.format(
                reason=last_error, lo=params.min_children, hi=params.max_children
            )
        reply = chat.chat(ChatRequest.user(prompt + suffix, key=f"plan_outline:{attempt}"))
        try:
            tree = parse_outline(reply.text, params)
            validate_outline(tree, params)
        except (ParseError, OutlineShapeError) as exc:
            last_error = exc
            log.warning("outline attempt %d rejected: %s", attempt + 1, exc)
            continue
        tree.root.summary = plot.summary_5_sentences
        return tree
    assert last_error is not None
    raise last_error
