from .engine import (
    DEFAULT_K,
    ExampleShot,
    FunctionDescriptionList,
    Purpose,
    RenderedPrompt,
    ViewSummary,
    default_shots,
    load_shots,
    parse_function_response,
    parse_no_phase_reply,
    parse_no_view_summary_reply,
    parse_summary_response,
    placeholders,
    render_alt_workflow_prompts,
    render_function_prompt,
    render_no_phase_prompt,
    render_no_view_description_prompt,
    render_no_view_summary_prompt,
    render_report_prompt,
    render_summary_prompt,
    select_shots,
)

__all__ = [
    "DEFAULT_K",
    "ExampleShot",
    "FunctionDescriptionList",
    "Purpose",
    "RenderedPrompt",
    "ViewSummary",
    "default_shots",
    "load_shots",
    "parse_function_response",
    "parse_no_phase_reply",
    "parse_no_view_summary_reply",
    "parse_summary_response",
    "placeholders",
    "render_alt_workflow_prompts",
    "render_function_prompt",
    "render_no_phase_prompt",
    "render_no_view_description_prompt",
    "render_no_view_summary_prompt",
    "render_report_prompt",
    "render_summary_prompt",
    "select_shots",
]
