"""Asynchronous intensity-event video toolkit.

Transcodes framed video into per-pixel intensity events, compresses the
event stream with a source-modeled arithmetic codec, reconstructs frames,
and runs an event-driven corner detector that can steer transcoder
sensitivity.
"""

from .events import (
    CODEC_COMPRESSED,
    CODEC_RAW,
    CRF_PARAMS,
    DEFAULT_DT_REF,
    EMPTY,
    Event,
    ParamSet,
    StreamHeader,
    StreamFormatError,
    crf_params,
    display_intensity,
    event_intensity,
    parse_event,
    read_header,
    read_stream,
    serialize_event,
    write_header,
    write_stream,
)
from .compress import (
    Adu,
    DecodeError,
    EventCube,
    build_adus,
    choose_shift,
    compress_events,
    decode_adu,
    decompress_payloads,
    encode_adu,
    read_compressed,
    t_prediction,
    write_compressed,
)
from .fastdet import (
    RING,
    Detector,
    detect_frame,
    is_feature,
    make_feature_hook,
    rate_control_policy,
)
from .harness import (
    CLIP_KINDS,
    CSV_FIELDS,
    ExperimentConfig,
    MetricsRow,
    PipelineError,
    PipelineResult,
    ingest_y4m,
    load_frames,
    load_raw,
    report,
    run_pipeline,
    synth_clip,
    worker_count,
    write_raw,
    write_y4m,
)
from .reconstruct import PSNR_CAP, Reconstructor, mse, psnr, reconstruct_at_boundaries
from .transcode import PixelIntegrator, Transcoder, coalesce_queue, starting_decimation, transcode

__all__ = [
    "Adu",
    "CODEC_COMPRESSED",
    "CODEC_RAW",
    "CRF_PARAMS",
    "DEFAULT_DT_REF",
    "CLIP_KINDS",
    "CSV_FIELDS",
    "DecodeError",
    "Detector",
    "EMPTY",
    "Event",
    "EventCube",
    "ExperimentConfig",
    "MetricsRow",
    "ParamSet",
    "PSNR_CAP",
    "PipelineError",
    "PipelineResult",
    "PixelIntegrator",
    "RING",
    "Reconstructor",
    "StreamFormatError",
    "StreamHeader",
    "Transcoder",
    "build_adus",
    "choose_shift",
    "coalesce_queue",
    "compress_events",
    "crf_params",
    "decode_adu",
    "decompress_payloads",
    "detect_frame",
    "display_intensity",
    "encode_adu",
    "event_intensity",
    "ingest_y4m",
    "is_feature",
    "load_frames",
    "load_raw",
    "make_feature_hook",
    "mse",
    "parse_event",
    "psnr",
    "rate_control_policy",
    "read_compressed",
    "read_header",
    "read_stream",
    "reconstruct_at_boundaries",
    "report",
    "run_pipeline",
    "serialize_event",
    "starting_decimation",
    "synth_clip",
    "t_prediction",
    "transcode",
    "worker_count",
    "write_compressed",
    "write_header",
    "write_raw",
    "write_stream",
    "write_y4m",
]
