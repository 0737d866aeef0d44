from ._core import (
    Model,
    ade_fde,
    apd,
    build_id,
    load_clip,
    save_clip,
    synth_corpus,
    total_loss_grad_check,
)

__all__ = [
    "Model",
    "ade_fde",
    "apd",
    "build_id",
    "load_clip",
    "save_clip",
    "synth_corpus",
    "total_loss_grad_check",
]
