"""Multichannel utterance clustering: stereo channel combinations, embeddings and per-speaker GMMs."""

__version__ = "0.1.0"

from .audio_io import (
    StereoSegment,
    StereoSignal,
    UtteranceSpan,
    cut_and_segment,
    decode_wav,
    load_manifest,
    read_manifest,
    read_wav,
)
from .channel_ops import ALL_METHODS, Method, ProcessedSignal, combine
from .embedding import (
    EmbeddingSet,
    EmbeddingVector,
    SpectralEmbedderConfig,
    embed_spectral,
    export_embeddings,
    import_embeddings,
    read_embeddings,
)
from .eval_stats import (
    ExperimentReport,
    RunResult,
    SplitPlan,
    StatSummary,
    error_rate,
    mann_whitney_u,
    pca_project,
    run_experiment,
    split_train_test,
    zscore,
)
from .gmm import (
    FitConfig,
    ModelBank,
    SpeakerModel,
    classify,
    em_fit,
    kmeans_init,
    load_bank,
    log_density,
    save_bank,
    train_bank,
)
