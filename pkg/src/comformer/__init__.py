"""Code-comment generation with a Transformer over code tokens and a
simplified AST traversal, sharing one byte-level BPE vocabulary."""

from .bpe import BpeModel, load_bpe, save_bpe, train_bpe
from .linearize import sbt, sim_sbt
from .model import ComFormerModel, ModelConfig

__all__ = ["BpeModel", "ComFormerModel", "ModelConfig", "load_bpe", "save_bpe", "sbt", "sim_sbt", "train_bpe"]
__version__ = "0.1.0"
