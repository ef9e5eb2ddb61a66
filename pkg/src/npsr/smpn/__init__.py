from .train import Adam, TrainConfig, joint_loss_and_grads, train
from .unet import (
    FULL_CHANNELS,
    UNetConfig,
    UNetParams,
    dice_loss,
    dice_score,
    load_params,
    predict_mask,
    save_params,
    unet_backward,
    unet_forward,
)

__all__ = [
    "Adam", "TrainConfig", "train", "joint_loss_and_grads",
    "FULL_CHANNELS", "UNetConfig", "UNetParams", "dice_loss", "dice_score",
    "load_params", "predict_mask", "save_params", "unet_backward", "unet_forward",
]
