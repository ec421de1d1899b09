"""Model wrappers behind two tiny interfaces.

A generation model turns (preamble, input, temperature?) into text; a VQA
model answers a question about an image (path or raw bytes).  The model
id ``echo`` selects deterministic no-inference stand-ins used by CI and
integration tests; any other id is treated as a Hugging Face model name
and loaded lazily.
"""

from __future__ import annotations

from pathlib import Path

ECHO_MODEL_ID = "echo"

INPUT_SLOT = "$INPUT"


def render_prompt(preamble: str, input_text: str) -> str:
    """Substitute the input slot, or append when the preamble has none."""
    if INPUT_SLOT in preamble:
        return preamble.replace(INPUT_SLOT, input_text)
    return f"{preamble}\n\n{input_text}"


class EchoGenerationModel:
    """Returns the rendered input back; deterministic and dependency-free."""

    model_id = ECHO_MODEL_ID

    def complete(self, preamble: str, input_text: str, temperature: float | None = None) -> str:
        return input_text


class EchoVqaModel:
    """Always answers yes; never touches the image."""

    model_id = ECHO_MODEL_ID
    needs_image_bytes = False

    def answer(self, image, question: str) -> str:
        return "yes"


class HfGenerationModel:
    """Greedy text-generation via a transformers pipeline."""

    def __init__(self, model_id: str, device: str = "cpu"):
        from transformers import pipeline  # deferred: heavy import

        self.model_id = model_id
        self._pipe = pipeline("text-generation", model=model_id, device=device)

    def complete(self, preamble: str, input_text: str, temperature: float | None = None) -> str:
        prompt = render_prompt(preamble, input_text)
        kwargs = {"do_sample": False, "max_new_tokens": 512, "return_full_text": False}
        if temperature is not None and temperature > 0:
            kwargs.update(do_sample=True, temperature=temperature)
        out = self._pipe(prompt, **kwargs)
        return out[0]["generated_text"]


class HfVqaModel:
    """Visual question answering via a transformers pipeline."""

    needs_image_bytes = True

    def __init__(self, model_id: str, device: str = "cpu"):
        from transformers import pipeline  # deferred: heavy import

        self.model_id = model_id
        self._pipe = pipeline("visual-question-answering", model=model_id, device=device)

    def answer(self, image, question: str) -> str:
        import io

        from PIL import Image

        if isinstance(image, (str, Path)):
            pil = Image.open(image)
        else:
            pil = Image.open(io.BytesIO(image))
        out = self._pipe(pil, question, top_k=1)
        return out[0]["answer"]


def load_generation_model(model_id: str, device: str = "cpu"):
    if model_id == ECHO_MODEL_ID:
        return EchoGenerationModel()
    return HfGenerationModel(model_id, device)


def load_vqa_model(model_id: str, device: str = "cpu"):
    if model_id == ECHO_MODEL_ID:
        return EchoVqaModel()
    return HfVqaModel(model_id, device)
