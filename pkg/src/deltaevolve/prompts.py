"""Prompt template text.

The delimiter strings, key names, SEARCH/REPLACE markers, and section
headings here are load-bearing: the response parser and the offline mutation
provider both match against them byte-for-byte, so change them only together
with `delta_codec`.
"""

from .delta_codec import (
    DIVIDER_MARKER,
    PLAN_END,
    PLAN_START,
    REPLACE_MARKER,
    SEARCH_MARKER,
    SUMMARY_END,
    SUMMARY_START,
)

PROBLEM_HEADER = (
    "---------------------------------  Problem Description  "
    "---------------------------------"
)

DELTA_INSTRUCTIONS_HEADER = (
    "----------------------  Delta Logging Instructions  ----------------------"
)

CURRENT_PROGRAM_HEADER = (
    "----------------------------  Current Program Information  "
    "----------------------------"
)

DELTA_INSPIRATIONS_HEADER = (
    "------------  Inspirations: Delta of History Nodes  ------------"
)

FULLCODE_INSPIRATIONS_HEADER = (
    "------------  Inspirations: History Programs  ------------"
)

PARENT_PROGRAM_HEADER = (
    "-----------------------------------  Parent Program  "
    "-----------------------------------"
)

TOP_DELTA_HEADING = "### Top Delta Plan {index}"
DIVERSE_DELTA_HEADING = "### Diverse Delta Plan {index}"
TOP_PROGRAM_HEADING = "### Top Program {index}"
DIVERSE_PROGRAM_HEADING = "### Diverse Program {index}"
RANDOM_PROGRAM_HEADING = "### Inspiration Program {index}"

DELTA_LOGGING_INSTRUCTIONS = f"""You MUST summarize your changes at the very end of your response using the strict format below.
This log is critical for the evolution memory system. Failure to follow these rules will break the experiment.

###CRITICAL RULES for DELTA SUMMARY:

1. NO META-TALK: Do NOT say Replace 22 lines with 230 lines, Updated code, or Changed logic.

2. ALGORITHMIC ONLY: Describe the strategy change (e.g., Switched from Greedy to Simulated Annealing).

3. NO TEMPLATES: Do NOT output placeholder text like high-level plan summary in one sentence. Write actual content.

4. NO CODE SYNTAX: Do not write Python code in the summary (e.g., no def function()). Use natural language.

{SUMMARY_START}

FROM: <One-sentence summary of the OLD strategy (the parent node's approach)>

TO: <One-sentence summary of the NEW strategy (your current approach)>

{SUMMARY_END}

----------------------------------------------------------------------------------------------------------------

###CRITICAL RULES for DELTA PLAN DETAILS

You must explain HOW and WHY the logic changed using the strict format below.

1. Target Audience: A researcher trying to reproduce your experiment without seeing the code.

2. BE QUANTITATIVE: Do not say increased parameters. Say increased grid_resolution from 10 to 50.

3. NAME THE ALGORITHM: Use standard terminology (e.g., Coordinate Descent, Simulated Annealing, Penalty Method).

4. NO META-TALK: Do not say I defined a function. Describe the LOGIC flow.

{PLAN_START}

[Modification 1]
COMPONENT:   <The specific module changed. e.g., Initialization Strategy, Constraint Handling, Optimization Loop>
OLD_LOGIC:  <Brief summary of what was removed. e.g., Random noise injection>
NEW_LOGIC:  <DETAILED mechanism. MUST include specific hyperparameters, formulas used, or heuristic rules.>
HYPOTHESIS: <The scientific reasoning.>

[Modification 2] (If applicable)
COMPONENT:   ...
OLD_LOGIC:  ...
NEW_LOGIC:  ...
HYPOTHESIS:  ...

{PLAN_END}"""

DELTA_INSPIRATIONS_INTRO = (
    "Below we provide history delta plans from prior nodes, including "
    "top-performing programs and highly diverse alternatives to the parent. "
    "Each delta highlights concrete strategy differences that may inspire new "
    "solution directions rather than direct reuse."
)

FULLCODE_INSPIRATIONS_INTRO = (
    "Below we provide full programs from prior nodes as inspirations. Each "
    "program shows a complete alternative approach that may inspire new "
    "solution directions rather than direct reuse."
)

DIFF_INSTRUCTIONS = f"""Suggest improvements to the program that will improve its FITNESS SCORE.
The system maintains diversity across these dimensions: complexity, diversity
Different solutions with similar fitness but different features are valuable.

You MUST use the exact SEARCH/REPLACE diff format shown below to indicate changes:

{SEARCH_MARKER}
<Original code to find and replace (must match exactly)>
{DIVIDER_MARKER}
<New replacement code>
{REPLACE_MARKER}"""


def render_system_prompt(problem_details: str) -> str:
    return (
        f"{PROBLEM_HEADER}\n\n"
        f"{problem_details}\n\n"
        f"{DELTA_INSTRUCTIONS_HEADER}\n\n"
        f"{DELTA_LOGGING_INSTRUCTIONS}\n"
    )
