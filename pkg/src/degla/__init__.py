"""Hard-negative contrastive dual-encoder training with EMA self-distillation, at desk scale."""

from .dataio import CorpusRecord, VocabSpec, load_corpus, synth_corpus, write_corpus
from .encoders import DualEncoder, TeacherState, Tokenizer, ema_update, load_checkpoint, save_checkpoint
from .evaluation import compositional_accuracy, drift_score, evaluate, retrieval_recall
from .losses import (augmented_i2t, base_loss, clip_loss, distill_loss, igc_loss, info_nce_i2t, info_nce_t2i,
                     tgc_loss, total_loss)
from .trainer import DESK_PRESET, PAPER_PRESET, TrainConfig, train_on_records

__version__ = "0.1.0"

__all__ = [
    "CorpusRecord", "DESK_PRESET", "DualEncoder", "PAPER_PRESET", "TeacherState", "Tokenizer", "TrainConfig",
    "VocabSpec", "augmented_i2t", "base_loss", "clip_loss", "compositional_accuracy", "distill_loss",
    "drift_score", "ema_update", "evaluate", "igc_loss", "info_nce_i2t", "info_nce_t2i", "load_checkpoint",
    "load_corpus", "retrieval_recall", "save_checkpoint", "synth_corpus", "tgc_loss", "total_loss",
    "train_on_records", "write_corpus",
]
