"""Server configuration and the advertised capability descriptor."""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class ServerConfig:
    denoiser: str = "analytic"
    captioner: str = "echo"
    embedder: str = "projection"
    device: str = "cpu"
    max_concurrency: int = 8
    port: int = 8080
    host: str = "127.0.0.1"
    native_patch_h: int = 32
    native_patch_w: int = 32
    channels: int = 4
    data_std: float = 0.5
    schedule_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    schedule_kind: str = "scaled_linear"
    caption_text: str = "a sunlit palm tree over white sand, detailed"

    def capability(self) -> dict:
        return {
            "native_patch_h": self.native_patch_h,
            "native_patch_w": self.native_patch_w,
            "channels": self.channels,
        }

    def capability_line(self) -> str:
        return "capability " + json.dumps(self.capability(), sort_keys=True)
