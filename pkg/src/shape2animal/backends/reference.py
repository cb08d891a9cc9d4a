"""Reference adapters over real models and services.

Integration-only: each adapter imports its heavy dependencies lazily inside
``__init__`` and raises BackendUnavailableError with an actionable message
when a dependency, model weight, or credential is missing, so offline runs
fail fast and the rest of the package never pays the import cost.

Env vars: ``S2A_VLM_API_KEY`` (hosted interpreter credential, never
persisted), ``S2A_VLM_MODEL`` (hosted model name), ``S2A_DEVICE`` (compute
device hint for the local models, e.g. "cpu" or "cuda").
"""

from __future__ import annotations

import base64
import io
import json
import os

import numpy as np

from ..errors import (
    BackendError,
    BackendRateLimitError,
    BackendTimeoutError,
    BackendTransientError,
    BackendUnavailableError,
)
from ..imaging import BoundingBox, Mask, Raster, quantize_to_u8
from .base import register


def _device() -> str:
    hint = os.environ.get("S2A_DEVICE")
    if hint:
        return hint
    try:
        import torch
        return "cuda" if torch.cuda.is_available() else "cpu"
    except ImportError:
        return "cpu"


def _require(module_names, backend_id):
    mods = []
    for name in module_names:
        try:
            mods.append(__import__(name))
        except ImportError as err:
            raise BackendUnavailableError(
                f"backend {backend_id!r} needs the optional dependency {name!r} "
                f"(pip install 'shape2animal[reference]'): {err}",
                backend_id=backend_id,
            ) from err
    return mods


def _to_pil(raster: Raster):
    from PIL import Image
    return Image.fromarray(quantize_to_u8(raster.data), mode="RGB")


@register("detect", "grounding-dino", determinism="deterministic", thread_safe=False)
class GroundingDinoDetector:
    """Open-vocabulary detector backed by a Grounding-DINO-class checkpoint."""

    def __init__(self, model_name="IDEA-Research/grounding-dino-tiny", box_threshold=0.25):
        _require(["torch", "transformers"], "grounding-dino")
        from transformers import AutoModelForZeroShotObjectDetection, AutoProcessor

        self.device = _device()
        self.box_threshold = box_threshold
        try:
            self.processor = AutoProcessor.from_pretrained(model_name)
            self.model = AutoModelForZeroShotObjectDetection.from_pretrained(model_name)
        except Exception as err:  # missing weights / hub offline
            raise BackendUnavailableError(
                f"could not load detector weights {model_name!r}: {err}",
                backend_id="grounding-dino",
            ) from err
        self.model.to(self.device).eval()

    def detect(self, image: Raster, vocabulary):
        import torch

        text = ". ".join(vocabulary) + "."
        inputs = self.processor(images=_to_pil(image), text=text, return_tensors="pt").to(self.device)
        with torch.no_grad():
            outputs = self.model(**inputs)
        results = self.processor.post_process_grounded_object_detection(
            outputs,
            inputs.input_ids,
            threshold=self.box_threshold,
            target_sizes=[(image.height, image.width)],
        )[0]
        boxes = []
        for xyxy, score, label in zip(results["boxes"], results["scores"], results["text_labels"]):
            x0, y0, x1, y1 = (float(v) for v in xyxy)
            x0 = max(0.0, x0)
            y0 = max(0.0, y0)
            x1 = min(float(image.width), x1)
            y1 = min(float(image.height), y1)
            if x1 <= x0 or y1 <= y0:
                continue
            boxes.append(BoundingBox(x0, y0, x1, y1, score=min(1.0, float(score)), label=str(label)))
        return boxes


@register("segment", "sam", determinism="deterministic", thread_safe=False)
class SamSegmenter:
    """Promptable segmenter backed by a SAM-class checkpoint (box prompts)."""

    def __init__(self, model_name="facebook/sam-vit-base"):
        _require(["torch", "transformers"], "sam")
        from transformers import SamModel, SamProcessor

        self.device = _device()
        try:
            self.processor = SamProcessor.from_pretrained(model_name)
            self.model = SamModel.from_pretrained(model_name)
        except Exception as err:
            raise BackendUnavailableError(
                f"could not load segmenter weights {model_name!r}: {err}",
                backend_id="sam",
            ) from err
        self.model.to(self.device).eval()

    def segment(self, image: Raster, box: BoundingBox) -> Mask:
        import torch

        inputs = self.processor(
            _to_pil(image),
            input_boxes=[[[box.x0, box.y0, box.x1, box.y1]]],
            return_tensors="pt",
        ).to(self.device)
        with torch.no_grad():
            outputs = self.model(**inputs)
        masks = self.processor.image_processor.post_process_masks(
            outputs.pred_masks.cpu(),
            inputs["original_sizes"].cpu(),
            inputs["reshaped_input_sizes"].cpu(),
        )[0]
        scores = outputs.iou_scores.cpu().numpy().reshape(-1)
        best = int(scores.argmax())
        fg = masks[0, best].numpy().astype(bool)
        return Mask.from_bool(fg)


@register("interpret", "hosted-vlm", determinism="stochastic", thread_safe=True,
          rate_limit_hint=1.0)
class HostedVlmInterpreter:
    """Hosted multimodal LLM endpoint speaking the generateContent protocol.

    Reads its credential from S2A_VLM_API_KEY at call setup and never writes
    it anywhere. Offline or credential-less environments fail fast.
    """

    def __init__(self, model=None, endpoint=None, timeout=60.0):
        self.api_key = os.environ.get("S2A_VLM_API_KEY")
        if not self.api_key:
            raise BackendUnavailableError(
                "hosted-vlm needs the S2A_VLM_API_KEY environment variable",
                backend_id="hosted-vlm",
            )
        _require(["httpx"], "hosted-vlm")
        self.model = model or os.environ.get("S2A_VLM_MODEL", "gemini-2.5-flash")
        self.endpoint = endpoint or (
            "https://generativelanguage.googleapis.com/v1beta/models/"
            f"{self.model}:generateContent"
        )
        self.timeout = timeout

    def complete(self, request) -> str:
        import httpx

        buf = io.BytesIO()
        _to_pil(request.silhouette_image).save(buf, format="PNG")
        payload = {
            "contents": [{
                "parts": [
                    {"inline_data": {
                        "mime_type": "image/png",
                        "data": base64.b64encode(buf.getvalue()).decode("ascii"),
                    }},
                    {"text": request.instruction},
                ],
            }],
        }
        try:
            resp = httpx.post(
                self.endpoint,
                params={"key": self.api_key},
                json=payload,
                timeout=self.timeout,
            )
        except httpx.TimeoutException as err:
            raise BackendTimeoutError(f"hosted-vlm timed out: {err}", backend_id="hosted-vlm") from err
        except httpx.TransportError as err:
            raise BackendTransientError(f"hosted-vlm transport error: {err}", backend_id="hosted-vlm") from err
        if resp.status_code == 429:
            raise BackendRateLimitError("hosted-vlm rate limited", backend_id="hosted-vlm")
        if resp.status_code >= 500:
            raise BackendTransientError(
                f"hosted-vlm server error {resp.status_code}", backend_id="hosted-vlm"
            )
        if resp.status_code != 200:
            raise BackendError(
                f"hosted-vlm returned {resp.status_code}: {resp.text[:200]}",
                backend_id="hosted-vlm",
            )
        body = resp.json()
        try:
            parts = body["candidates"][0]["content"]["parts"]
            return "".join(p.get("text", "") for p in parts)
        except (KeyError, IndexError, TypeError) as err:
            raise BackendError(
                f"hosted-vlm response missing text content: {json.dumps(body)[:200]}",
                backend_id="hosted-vlm",
            ) from err


@register("depth", "midas", determinism="deterministic", thread_safe=False)
class MidasDepth:
    """Monocular depth estimator backed by a MiDaS-class DPT checkpoint."""

    def __init__(self, model_name="Intel/dpt-hybrid-midas"):
        _require(["torch", "transformers"], "midas")
        from transformers import DPTForDepthEstimation, DPTImageProcessor

        self.device = _device()
        try:
            self.processor = DPTImageProcessor.from_pretrained(model_name)
            self.model = DPTForDepthEstimation.from_pretrained(model_name)
        except Exception as err:
            raise BackendUnavailableError(
                f"could not load depth weights {model_name!r}: {err}",
                backend_id="midas",
            ) from err
        self.model.to(self.device).eval()

    def estimate(self, image: Raster) -> np.ndarray:
        import torch

        inputs = self.processor(images=_to_pil(image), return_tensors="pt").to(self.device)
        with torch.no_grad():
            depth = self.model(**inputs).predicted_depth
        depth = torch.nn.functional.interpolate(
            depth.unsqueeze(1),
            size=(image.height, image.width),
            mode="bicubic",
            align_corners=False,
        )
        out = depth.squeeze().cpu().numpy().astype(np.float64)
        return np.maximum(out, 0.0)


@register("generate", "sdxl-inpaint", determinism="stochastic-with-seed", thread_safe=False)
class SdxlInpaintGenerator:
    """Depth-controlled inpainting generator (SDXL + depth ControlNet)."""

    def __init__(self,
                 model_name="diffusers/stable-diffusion-xl-1.0-inpainting-0.1",
                 controlnet_name="diffusers/controlnet-depth-sdxl-1.0-small"):
        _require(["torch", "diffusers"], "sdxl-inpaint")
        import torch
        from diffusers import ControlNetModel, StableDiffusionXLControlNetInpaintPipeline

        self.device = _device()
        dtype = torch.float16 if self.device == "cuda" else torch.float32
        try:
            controlnet = ControlNetModel.from_pretrained(controlnet_name, torch_dtype=dtype)
            self.pipe = StableDiffusionXLControlNetInpaintPipeline.from_pretrained(
                model_name, controlnet=controlnet, torch_dtype=dtype
            )
        except Exception as err:
            raise BackendUnavailableError(
                f"could not load generator weights {model_name!r}: {err}",
                backend_id="sdxl-inpaint",
            ) from err
        self.pipe.to(self.device)

    def generate(self, image: Raster, mask: Mask, depth, prompt: str, config) -> Raster:
        import torch
        from PIL import Image

        control = Image.fromarray(quantize_to_u8(depth.data), mode="L").convert("RGB")
        mask_img = Image.fromarray(quantize_to_u8(mask.data), mode="L")
        generator = torch.Generator(device=self.device).manual_seed(config.seed & 0x7FFFFFFFFFFFFFFF)
        result = self.pipe(
            prompt=prompt,
            image=_to_pil(image),
            mask_image=mask_img,
            control_image=control,
            controlnet_conditioning_scale=float(config.control_strength),
            num_inference_steps=config.steps,
            guidance_scale=config.guidance,
            generator=generator,
            width=image.width,
            height=image.height,
        ).images[0]
        arr = np.asarray(result.convert("RGB"), dtype=np.float64) / 255.0
        return Raster(arr)
