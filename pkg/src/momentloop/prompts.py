"""Role prompt templates sent to backends."""

from __future__ import annotations

import string

MAX_SUBTITLE_LINES = 100
OPTION_LETTERS = "ABCDEFGHIJ"


class TemplateError(KeyError):
    pass


PLANNER = (
    "You are acting as the planner now. Given a question about the video, your task is to analyze "
    "the question and identify the best way to answer this question. You have access to the "
    "following tools:\n\n"
    "Grounder: Accepts a text query and localizes the relevant video segment according to the query.\n"
    "Verifier: A tool supporting grounder by verifying the reliability of its outputs.\n"
    "Answerer: Answer a given question directly based on the whole video or a cropped video segment.\n\n"
    "Your response must be a list in JSON format. A valid plan for reasoning could be "
    "\"grounder, verifier, answer\", \"grounder, verifier\", or \"answerer\", depending on the given "
    "question. Please see an example of the format below.\n\n"
    "[{\"type\": \"grounder\", \"value\": \"text query\"}, {\"type\": \"verifier\"}, {\"type\": \"answerer\"}]\n\n"
    "Note that only the grounder can accept an argument called \"value\", which is the text query used "
    "for grounding. Now I give you the question: \"$question\". Please think carefully and respond "
    "with your plan in JSON directly."
)

GROUNDER = (
    "You are acting as the grounder now. Given a video and a text query, your goal is to temporally "
    "localize the video moment described by the query. If the query is directly describing a moment, "
    "simply localize it according to its content. Otherwise, if the moment is described as "
    "\"before/after a pivotal event\", you need to determine the actual event it refers to. The "
    "localized moment should only cover the target event. Now I give you the query: \"$query\". "
    "Please think carefully and provide your response."
)

VERIFIER = (
    "You are acting as the verifier now. You will be presented a text query describing a moment that "
    "potentialy happens in the given video. Your task is to identify whether the video segment between "
    "<SEG-START> and <SEG-END> perfectly covers the moment. If the described moment can be seen in the "
    "video, please focus on verifying whether the moment starts at <SEG-START> and ends at <SEG-END>. "
    "Respond with \"Yes\" if you think the moment boundaries are correct, otherwise \"No\". If the "
    "described moment cannot be seen in the video, respond with \"No\" directly. Now I give you the "
    "query: \"$query\". Please think carefully and respond with \"Yes\" or \"No\" directly."
)

ANSWERER_HEADER = "You are given a video with $duration seconds long.\n"
ANSWERER_SUBTITLES = "Subtitles: $subtitles\n"
ANSWERER_BODY = "$question\n"
ANSWERER_OPTIONS_FOOTER = "Please only give the best option."

# kept for reference; query-rephrasing data generation is not run by this package
REPHRASE = (
    "You are an expert in rewriting questions into queries. I will give you a question that requires "
    "to be answered based on a specific moment in a video. Your task is to analyze the question and "
    "rewrite it into a declarative sentence, which could be used as a text query to search for the "
    "relevant video moment. The query should be concise, describing the key event or key scene that "
    "the question asks for.\n\n"
    "Here are some examples:\n\n"
    "Question: How does the male cyclist react when he sees the steep path?\n"
    "Query: The male cyclist sees the steep path.\n\n"
    "Question: What did the girl do at the end of the video?\n"
    "Query: The end of the video.\n\n"
    "Question: What did the lady do as she was cycling off?\n"
    "Query: The lady is cycling off.\n\n"
    "Question: What is the person with red shirt doing on the yacht?\n"
    "Query: The person with red shirt stays on the yacht.\n\n"
    "Now I give you the question: \"$question\". Please think carefully and respond with the query directly."
)


def _require(slots: dict, *names: str) -> None:
    for name in names:
        value = slots.get(name)
        if value is None or (isinstance(value, str) and not value.strip()):
            raise TemplateError(f"missing template slot {name!r}")


def truncate_subtitles(subtitles: str, max_lines: int = MAX_SUBTITLE_LINES) -> str:
    return "\n".join(subtitles.splitlines()[:max_lines])


def render_prompt(role: str, **slots) -> str:
    if role == "planner":
        _require(slots, "question")
        return string.Template(PLANNER).substitute(question=slots["question"])
    if role == "grounder":
        _require(slots, "query")
        return string.Template(GROUNDER).substitute(query=slots["query"])
    if role == "verifier":
        _require(slots, "query")
        return string.Template(VERIFIER).substitute(query=slots["query"])
    if role == "answerer":
        _require(slots, "duration", "question")
        parts = [string.Template(ANSWERER_HEADER).substitute(duration=_fmt_duration(slots["duration"]))]
        if slots.get("subtitles"):
            parts.append(string.Template(ANSWERER_SUBTITLES).substitute(
                subtitles=truncate_subtitles(slots["subtitles"])))
        parts.append(string.Template(ANSWERER_BODY).substitute(question=slots["question"]))
        options = slots.get("options")
        if options:
            if len(options) > len(OPTION_LETTERS):
                raise TemplateError(f"too many options ({len(options)})")
            parts.append("Options:\n")
            for letter, opt in zip(OPTION_LETTERS, options):
                parts.append(f"({letter}) {opt}\n")
            parts.append(ANSWERER_OPTIONS_FOOTER)
        return "".join(parts).rstrip("\n")
    raise TemplateError(f"unknown role {role!r}")


def _fmt_duration(d) -> str:
    d = float(d)
    return str(int(d)) if d.is_integer() else f"{d:.1f}"
