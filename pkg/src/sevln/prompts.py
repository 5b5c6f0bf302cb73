"""Fixed prompt texts.

The OUTPUT-FORMAT blocks are part of the package contract: parsers in
reasoning.py and reflection.py expect replies in exactly these shapes, and
the texts are versioned here and documented in the README. Change them only
together with the parsers.
"""

ANNOTATE_TASK = (
    "You are the scene annotator for an indoor navigation agent. Summarize the "
    "candidate views visible from the current node into one concise scene "
    "description. Reply with the description text only."
)

LANDMARK_TASK = (
    "You extract landmarks from navigation instructions. Reply with a JSON "
    "array of the landmark and destination nouns, lowercase, and nothing else."
)

DECIDE_TASK = (
    "You are an indoor navigation agent. Follow the instruction, consult the "
    "map of what you have seen and any prior experience, then choose the next "
    "action from the candidates. Work through thinking, planning, and "
    "executing, and obey OUTPUT-FORMAT exactly."
)

CORRECT_TASK = (
    "You review a finished navigation episode that missed its goal. Find the "
    "first unreasonable decision in the annotated map, explain what should "
    "have happened, and give the corrected decision. Obey OUTPUT-FORMAT "
    "exactly."
)

OUTPUT_FORMAT_COT = (
    'Reply with a single JSON object and nothing else:\n'
    '{"thinking": string, "planning": string, "action": string}\n'
    '"action" must be exactly "stop" or one of the candidate node ids. '
    '"thinking" and "planning" must be non-empty.'
)

OUTPUT_FORMAT_ACTION_ONLY = (
    'Reply with a single JSON object and nothing else:\n'
    '{"action": string}\n'
    '"action" must be exactly "stop" or one of the candidate node ids.'
)

OUTPUT_FORMAT_CORRECTION = (
    'Reply with a single JSON object and nothing else:\n'
    '{"step": integer, "thinking": string, "planning": string, "action": string}\n'
    '"step" is the index of the decision you revise. "action" must be exactly '
    '"stop" or one of the node ids that was a candidate at that step. '
    '"thinking" and "planning" must be non-empty.'
)
