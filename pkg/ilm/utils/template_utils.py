from string import Formatter
from typing import Dict, List, Sequence, Tuple

from ..dataset.schemas import Slot
from ..dataset.vocab import ITEM_MARKER, USER_MARKER, Vocabulary
from ..errors import TemplateError
from ..template.prompt_templates import REGIMES, TEMPLATE_DEFINITIONS
from .formatting_id import ItemIndexer, user_token

HISTORY_SEPARATOR = ","


def template_fields(template: str) -> List[str]:
    try:
        return [name for _, name, _, _ in Formatter().parse(template) if name is not None]
    except ValueError as e:
        raise TemplateError(f"malformed template '{template}': {e}")


def check_template_fields(task: str) -> None:
    """Every template of `task` may reference only the fields its definition declares."""
    definition = TEMPLATE_DEFINITIONS[task]
    declared = set(definition["fields"])
    for text in definition["train"] + definition["unseen"]:
        undeclared = sorted(set(template_fields(text)) - declared)
        if undeclared:
            raise TemplateError(f"template for '{task}' references undeclared fields {undeclared}", hint=text)


def get_templates(task: str, regime: str) -> List[Tuple[str, str]]:
    """(template_id, text) pairs; `seen` is the training set, `unseen` the held-out one."""
    if task not in TEMPLATE_DEFINITIONS:
        raise TemplateError(f"unknown task '{task}'")
    if regime not in REGIMES:
        raise TemplateError(f"unknown template regime '{regime}'")
    definition = TEMPLATE_DEFINITIONS[task]
    check_template_fields(task)
    if regime == "seen":
        return [(f"{task}-{i}", text) for i, text in enumerate(definition["train"])]
    return [(f"{task}-unseen-{i}", text) for i, text in enumerate(definition["unseen"])]


def template_literal_text() -> List[str]:
    """Literal (non-field) text of every template, for vocabulary construction."""
    texts = []
    for definition in TEMPLATE_DEFINITIONS.values():
        for template in definition["train"] + definition["unseen"]:
            texts.append(" ".join(literal for literal, _, _, _ in Formatter().parse(template)))
    return texts + [HISTORY_SEPARATOR]


def render_template(template: str, context: Dict[str, object], vocab: Vocabulary,
                    indexer: ItemIndexer) -> Tuple[List[int], List[Slot]]:
    """
    Render a template into token ids. Entity fields expand to the entity's id
    token followed by a placeholder marker; each marker becomes a Slot.

    context values: "user" -> user id, "item" -> item id, "history" -> item id list
    """
    ids: List[int] = []
    slots: List[Slot] = []

    def add_entity(kind: str, entity_id: int) -> None:
        if kind == "user":
            ids.append(vocab.id(user_token(entity_id)))
            marker = USER_MARKER
        else:
            ids.append(vocab.id(indexer.token(entity_id)))
            marker = ITEM_MARKER
        slots.append(Slot(position=len(ids), kind=kind, entity_id=int(entity_id)))
        ids.append(vocab.id(marker))

    try:
        parsed = list(Formatter().parse(template))
    except ValueError as e:
        raise TemplateError(f"malformed template '{template}': {e}")
    for literal, name, _, _ in parsed:
        if literal:
            ids.extend(vocab.encode(literal))
        if name is None:
            continue
        if name not in context:
            raise TemplateError(f"template references missing field '{{{name}}}'", hint=template)
        value = context[name]
        if name == "user":
            add_entity("user", value)
        elif name == "item":
            add_entity("item", value)
        elif name == "history":
            for position, item in enumerate(value):
                if position:
                    ids.append(vocab.id(HISTORY_SEPARATOR))
                add_entity("item", item)
        else:
            ids.extend(vocab.encode(str(value)))
    return ids, slots


def strip_placeholders(prompt_ids: Sequence[int], vocab: Vocabulary) -> List[int]:
    markers = {vocab.item_marker_id, vocab.user_marker_id}
    return [t for t in prompt_ids if t not in markers]
