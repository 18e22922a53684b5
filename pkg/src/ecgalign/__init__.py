"""Lead-aware multimodal ECG pretraining with mined cardiac-entity supervision."""

from .autodiff import Tensor, backward
from .data import (CANONICAL_LEADS, DatasetManifest, ECGRecord, load_manifest,
                   normalize_record)
from .encoder import (TokenizerConfig, TokenGrid, dynamic_lead_mask, encode,
                      segment_mask, tokenize)
from .evaluation import EvalReport, lead_sweep, linear_probe, seen_unseen_split, zero_shot
from .gradcheck import check_gradients
from .metrics import compute_auc, compute_f1
from .mining import (EntityVocabulary, RuleBasedClient, RuleTables,
                     build_vocabulary, extract_entities, label_report)
from .model import ModelConfig, ModelState, init_model
from .optim import AdamW, cosine_schedule
from .query import CQConfig, cq_loss, query_forward
from .synthetic import generate_synthetic
from .textenc import (TextConfig, TextEmbedding, TextVocab, embed_batch_external,
                      embed_text)
from .training import PretrainConfig, contrastive_loss, pretrain, total_loss

__version__ = "0.1.0"
