import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

from core.errors import UsageError
from models.base import LanguageModel
from models.external import ExternalModelClient
from models.seeded import SeededRandomModel
from models.tabular import load_table
from utils.config import MODELS_FILE, resolve_path

logger = logging.getLogger(__name__)

SELECTOR_KINDS = ("tabular", "seeded", "external")

# Cache for model instances
_model_cache: Dict[str, LanguageModel] = {}


class ModelManager:
    """Resolves model selectors and named presets to model instances.

    A selector is ``tabular:<path>``, ``seeded:<seed>`` or
    ``external:<endpoint>``; any other name is looked up in the presets of
    ``config/models.json``. Seeded and external models take their vocabulary
    size and max_len from the index they are used with.
    """

    def __init__(self, models_file: Optional[Path] = None, timeout: float = 30.0, concentration: float = 1.0):
        self.models_file = Path(models_file) if models_file else MODELS_FILE
        self.timeout = timeout
        self.concentration = concentration
        self.presets = self.load_models_file()

    def load_models_file(self) -> Dict[str, Dict]:
        """Load the presets from the models file; none when it is absent."""
        if not self.models_file.exists():
            return {}
        with open(self.models_file, "r") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise UsageError(f"cannot parse {self.models_file}: {e}") from None
        return {p["name"]: p for p in data.get("presets", [])}

    def list_presets(self) -> List[Dict]:
        return [self.presets[name] for name in sorted(self.presets)]

    def resolve_selector(self, selector: str) -> str:
        kind, sep, _ = selector.partition(":")
        if sep and kind in SELECTOR_KINDS:
            return selector
        preset = self.presets.get(selector)
        if preset is None:
            raise UsageError(
                f"unknown model {selector!r}; use tabular:<path>, seeded:<seed>, "
                f"external:<endpoint> or one of {sorted(self.presets)}"
            )
        return preset["selector"]

    def get_model(self, selector: str, vocab_size: Optional[int] = None, max_len: Optional[int] = None) -> LanguageModel:
        """Get or create the model for ``selector``.

        Args:
            selector: Selector string or preset name.
            vocab_size: Vocabulary size for seeded and external models.
            max_len: Prefix bound for seeded and external models.

        Returns:
            A cached model instance.
        """
        selector = self.resolve_selector(selector)
        cache_key = f"{selector}@{vocab_size}/{max_len}"
        if cache_key not in _model_cache:
            _model_cache[cache_key] = self._create(selector, vocab_size, max_len)
        return _model_cache[cache_key]

    def _create(self, selector: str, vocab_size: Optional[int], max_len: Optional[int]) -> LanguageModel:
        kind, _, arg = selector.partition(":")
        if kind == "tabular":
            return load_table(resolve_path(arg))
        if vocab_size is None or max_len is None:
            raise UsageError(f"{kind} models need the vocabulary size and max_len of an index")
        if kind == "seeded":
            try:
                seed = int(arg)
            except ValueError:
                raise UsageError(f"seeded model needs an integer seed, got {arg!r}") from None
            return SeededRandomModel(vocab_size, max_len, seed, self.concentration)
        logger.info(f"Using external model at {arg}")
        return ExternalModelClient(arg, vocab_size, max_len, timeout=self.timeout)


def close_models():
    """Close and forget every cached model."""
    for model in _model_cache.values():
        model.close()
    _model_cache.clear()
