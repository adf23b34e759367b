"""Hard negative caption generation: tagging, rule mutators, LLM path, filtering, assembly."""

from .filtering import filter_negatives, rejection_reason
from .llm import (HttpChatClient, LlmClient, PromptTemplate, StubClient, llm_generate, load_template,
                  load_templates, parse_candidates)
from .pipeline import (K_NEGATIVES, GenerationStats, LlmGenerator, NegativeSet, RuleGenerator,
                       assemble_negative_set, child_seed, generate_for_records)
from .rules import (RULES, Caption, NegativeCaption, Source, Subtype, gen_adj_replace, gen_adj_swap,
                    gen_noun_replace, gen_noun_swap, gen_reshuffle, generate_rule, parse_caption)

__all__ = [
    "Caption", "GenerationStats", "HttpChatClient", "K_NEGATIVES", "LlmClient", "LlmGenerator",
    "NegativeCaption", "NegativeSet", "PromptTemplate", "RULES", "RuleGenerator", "Source", "StubClient",
    "Subtype", "assemble_negative_set", "child_seed", "filter_negatives", "gen_adj_replace",
    "gen_adj_swap", "gen_noun_replace", "gen_noun_swap", "gen_reshuffle", "generate_for_records",
    "generate_rule", "llm_generate", "load_template", "load_templates", "parse_candidates",
    "parse_caption", "rejection_reason",
]
