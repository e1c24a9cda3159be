"""Label-conditioned caption and instruction data generation.

Each training image is described by an MLLM that is told the ground-truth label,
so fake images consistently receive negative descriptions. Paragraphs are split
into sentences tagged with the facial region they talk about; the tagged sentences
become contrastive text targets for stage 1 and instruction-tuning pairs for
stage 2.
"""

# Import built-in modules
import asyncio
import base64
from collections.abc import Iterable
from dataclasses import dataclass
import io
from pathlib import Path
import re
from typing import Literal
from typing import Protocol

# Import third-party modules
import httpx
from loguru import logger
import numpy as np
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import model_validator
from tenacity import AsyncRetrying
from tenacity import retry_if_exception_type
from tenacity import stop_after_attempt
from tenacity import wait_exponential

# Import local modules
from authguard.client_config import MllmClientConfig
from authguard.errors import AuthGuardError
from authguard.errors import ErrorCode
from authguard.synthface import ArtifactKind
from authguard.synthface import Label
from authguard.synthface import SynthCorpus
from authguard.synthface import load_corpus
from authguard.synthface import to_png
from authguard.utils import normalize_text
from authguard.utils import read_jsonl
from authguard.utils import sha256_text
from authguard.utils import stable_hash
from authguard.utils import write_jsonl

# Priority order: the first keyword found in a sentence decides its region
REGION_KEYWORDS: tuple[str, ...] = ("eyes", "mouth", "chin", "hair", "nose", "skin")
Region = Literal["eyes", "mouth", "chin", "hair", "nose", "skin", "other"]

CAPTION_PROMPT_TEMPLATE = (
    "Explain why the face attributes (e.g., eyes, mouth, chin, hair, nose, and others) make this image look {label}"
)
DETECTION_QUESTION = "Is this image real or fake? Explain."
REGION_QUESTION_TEMPLATE = "Describe the {region} in this image."

_SENTENCE_PATTERN = re.compile(r"[^.!?]*[.!?]+|[^.!?]+$")

# Words a stub description of a real image never contains
NEGATIVE_LEXICON: tuple[str, ...] = ("blurry", "misaligned", "unnatural", "distorted")

_STUB_REAL = (
    "The eyes are clear and evenly spaced. The skin shows smooth and consistent shading.",
    "The mouth has natural lip color and a relaxed shape. The hair frames the face cleanly.",
    "The nose casts soft, consistent shadows. The chin and jaw line follow a smooth contour.",
)
_STUB_FAKE: dict[ArtifactKind, tuple[str, ...]] = {
    ArtifactKind.BLEND_BOUNDARY: (
        "A visible seam runs across the chin where two faces were blended. "
        "The color of the chin does not match the cheeks above it.",
        "The chin shows an abrupt color band along the jaw. The chin contour looks distorted and unnatural.",
    ),
    ArtifactKind.EYE_ASYMMETRY: (
        "The eyes are misaligned and one eye looks larger than the other. The eyes appear unnatural and asymmetric.",
        "One of the eyes is visibly enlarged compared to its pair. The shading around the eyes looks distorted.",
    ),
    ArtifactKind.TEXTURE_NOISE: (
        "The skin on the cheeks is covered in unnatural bright speckles. The skin texture looks noisy and blurry.",
        "Patches of the skin show grainy noise. The skin looks distorted compared to a real face.",
    ),
    ArtifactKind.MOUTH_WARP: (
        "The mouth looks blurry and warped. The lips are distorted around the mouth corners.",
        "The mouth outline is wavy and misaligned. The color of the mouth looks unnatural.",
    ),
}


class CaptionSentence(BaseModel):
    """One region-tagged sentence of a caption paragraph."""

    text: str = Field(min_length=1)
    region: Region


class CaptionRecord(BaseModel):
    """Pseudo-text of one image.

    A record with ``error`` set marks an image whose caption could not be
    generated; it carries an empty paragraph and no sentences.
    """

    model_config = ConfigDict(populate_by_name=True)

    image_id: str
    label: Literal["real", "fake"]
    raw_paragraph: str = Field(alias="paragraph")
    sentences: list[CaptionSentence] = Field(default_factory=list)
    prompt_sha256: str | None = None
    error: str | None = None

    @model_validator(mode="after")
    def _check_sentences(self) -> "CaptionRecord":
        for sentence in self.sentences:
            if sentence.text not in self.raw_paragraph:
                raise ValueError(f"sentence {sentence.text!r} is not a segment of the paragraph")
        return self

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


class InstructionSample(BaseModel):
    """One (image, question, response) instruction-tuning triplet."""

    image_id: str
    question: str = Field(min_length=1)
    response: str = Field(min_length=1)
    source: Literal["generated", "fixture"] = "generated"


@dataclass(frozen=True)
class CaptionRequest:
    """Everything a client needs to describe one image."""

    image_id: str
    label: Label
    artifact_kind: ArtifactKind
    prompt: str
    pixels: np.ndarray

    def image_base64(self) -> str:
        """PNG encoding of the image as base64 text."""
        buffer = io.BytesIO()
        to_png(self.pixels).save(buffer, format="PNG")
        return base64.b64encode(buffer.getvalue()).decode("ascii")


class MllmClient(Protocol):
    """Anything that turns a caption request into a paragraph."""

    async def describe(self, request: CaptionRequest) -> str: ...

    async def aclose(self) -> None: ...


class StubMllmClient:
    """Offline client returning fixed two-sentence templates.

    The paragraph is a pure function of ``(image_id, label, artifact_kind)``: the
    artifact kind selects the template family and a hash of the id picks the
    variant.
    """

    async def describe(self, request: CaptionRequest) -> str:
        return self.paragraph_for(request.image_id, request.label, request.artifact_kind)

    @staticmethod
    def paragraph_for(image_id: str, label: Label | str, artifact_kind: ArtifactKind | str) -> str:
        label = Label.parse(label)
        artifact_kind = ArtifactKind(artifact_kind)
        if label == Label.REAL:
            variants = _STUB_REAL
        else:
            if artifact_kind not in _STUB_FAKE:
                raise AuthGuardError(
                    f"No stub template for fake kind '{artifact_kind.value}'", ErrorCode.VALIDATION_ERROR
                )
            variants = _STUB_FAKE[artifact_kind]
        return variants[stable_hash(image_id) % len(variants)]

    async def aclose(self) -> None:
        return None


class HttpMllmClient:
    """Client for an HTTP chat-completion endpoint.

    Request body: ``{"model", "messages": [{"role", "content", "image"}]}`` with the
    image as base64 PNG. Response body: ``{"text": "..."}``.
    """

    def __init__(self, config: MllmClientConfig, transport: httpx.AsyncBaseTransport | None = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        api_key = config.api_key
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.AsyncClient(timeout=config.timeout, headers=headers, transport=transport)

    async def describe(self, request: CaptionRequest) -> str:
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt, "image": request.image_base64()}],
        }
        response = await self._client.post(self.config.endpoint, json=payload)
        if response.status_code != 200:
            raise AuthGuardError(
                f"MLLM endpoint returned HTTP {response.status_code} for {request.image_id}", ErrorCode.API_FAILURE
            )
        try:
            text = response.json().get("text")
        except ValueError as e:
            raise AuthGuardError(f"MLLM endpoint returned invalid JSON: {e}", ErrorCode.API_FAILURE) from e
        if not isinstance(text, str) or not text.strip():
            raise AuthGuardError(f"MLLM response for {request.image_id} has no text", ErrorCode.API_FAILURE)
        return text

    async def aclose(self) -> None:
        await self._client.aclose()


def build_client(config: MllmClientConfig, transport: httpx.AsyncBaseTransport | None = None) -> MllmClient:
    """Create the stub or HTTP client described by ``config``."""
    if config.stub:
        logger.info("Using offline stub MLLM client")
        return StubMllmClient()
    logger.info(f"Using MLLM endpoint {config.endpoint} (model {config.model})")
    return HttpMllmClient(config, transport=transport)


def build_caption_prompt(label: Label | str) -> str:
    """Caption prompt conditioned on the ground-truth label.

    Args:
        label: ``real`` or ``fake``.

    Returns:
        str: The prompt template with the label word substituted.

    """
    return CAPTION_PROMPT_TEMPLATE.format(label=Label.parse(label).word)


def region_of(text: str) -> Region:
    """First region keyword contained in ``text`` (case-insensitive), else ``other``."""
    lowered = text.lower()
    for keyword in REGION_KEYWORDS:
        if keyword in lowered:
            return keyword  # type: ignore[return-value]
    return "other"


def split_caption(paragraph: str) -> list[tuple[str, Region]]:
    """Split a paragraph into region-tagged sentences.

    Sentences end at ``.``, ``!`` or ``?``; terminators stay attached so the
    sentences reconstruct the paragraph up to whitespace.

    Args:
        paragraph: Caption paragraph.

    Returns:
        list: ``(sentence, region)`` pairs in paragraph order.

    Raises:
        AuthGuardError: If the paragraph is empty.

    """
    if not paragraph or not paragraph.strip():
        raise AuthGuardError("Cannot split an empty caption paragraph", ErrorCode.EMPTY_INPUT)
    sentences = []
    for segment in _SENTENCE_PATTERN.findall(paragraph):
        text = segment.strip()
        if text:
            sentences.append((text, region_of(text)))
    return sentences


async def _describe_with_retry(client: MllmClient, request: CaptionRequest, config: MllmClientConfig) -> str:
    paragraph = ""
    async for attempt in AsyncRetrying(
        stop=stop_after_attempt(config.retries + 1),
        wait=wait_exponential(multiplier=config.backoff, max=30),
        retry=retry_if_exception_type((httpx.HTTPError, AuthGuardError)),
        reraise=True,
    ):
        with attempt:
            paragraph = await client.describe(request)
    return paragraph


async def generate_captions(
    corpus: SynthCorpus | str | Path,
    client: MllmClient,
    config: MllmClientConfig | None = None,
) -> list[CaptionRecord]:
    """Caption every image of a corpus with label-conditioned prompts.

    Up to ``config.concurrency`` requests are in flight; results are sorted by
    image id, so the output order does not depend on completion order.

    Args:
        corpus: Corpus object or corpus directory.
        client: Stub or HTTP client.
        config: Retry and concurrency settings; defaults to a stub configuration.

    Returns:
        list[CaptionRecord]: One record per image; failed images carry ``error``.

    Raises:
        AuthGuardError: If more than half of the images failed.

    """
    if not isinstance(corpus, SynthCorpus):
        corpus = load_corpus(corpus)
    config = config or MllmClientConfig(stub=True)
    semaphore = asyncio.Semaphore(config.concurrency)

    async def _caption(sample) -> CaptionRecord:
        prompt = build_caption_prompt(sample.label)
        request = CaptionRequest(
            image_id=sample.id,
            label=sample.label,
            artifact_kind=sample.artifact_kind,
            prompt=prompt,
            pixels=sample.pixels,
        )
        base = {"image_id": sample.id, "label": sample.label.word, "prompt_sha256": sha256_text(prompt)}
        try:
            async with semaphore:
                paragraph = normalize_text(await _describe_with_retry(client, request, config))
            sentences = split_caption(paragraph)
        except Exception as e:
            logger.warning(f"Caption generation failed for {sample.id}: {e!s}")
            return CaptionRecord(**base, raw_paragraph="", error=str(e) or type(e).__name__)
        return CaptionRecord(
            **base,
            raw_paragraph=paragraph,
            sentences=[CaptionSentence(text=text, region=region) for text, region in sentences],
        )

    records = await asyncio.gather(*(_caption(sample) for sample in corpus.samples))
    failures = sum(1 for record in records if not record.ok)
    if failures * 2 > len(records):
        raise AuthGuardError(
            f"Caption generation failed for {failures} of {len(records)} images; aborting",
            ErrorCode.API_FAILURE,
        )
    logger.info(f"Generated {len(records) - failures} caption(s), {failures} failure(s)")
    return sorted(records, key=lambda record: record.image_id)


def generate_captions_sync(
    corpus: SynthCorpus | str | Path, config: MllmClientConfig, transport: httpx.AsyncBaseTransport | None = None
) -> list[CaptionRecord]:
    """Blocking wrapper around :func:`generate_captions` that owns the client."""

    async def _run() -> list[CaptionRecord]:
        client = build_client(config, transport=transport)
        try:
            return await generate_captions(corpus, client, config)
        finally:
            await client.aclose()

    return asyncio.run(_run())


def build_instruction_samples(records: Iterable[CaptionRecord]) -> list[InstructionSample]:
    """Derive instruction-tuning pairs from caption records.

    Per record: one detection pair whose response starts with the verdict, then
    one region-specific pair per sentence with a known region. Failed records are
    skipped.

    Args:
        records: Caption records.

    Returns:
        list[InstructionSample]: Generated samples in record order.

    Raises:
        AuthGuardError: If ``records`` is empty.

    """
    records = list(records)
    if not records:
        raise AuthGuardError("No caption records to build instructions from", ErrorCode.EMPTY_INPUT)
    samples: list[InstructionSample] = []
    for record in records:
        if not record.ok:
            continue
        verdict = f"This image is {record.label}."
        response = " ".join([verdict, *(sentence.text for sentence in record.sentences)])
        samples.append(InstructionSample(image_id=record.image_id, question=DETECTION_QUESTION, response=response))
        for sentence in record.sentences:
            if sentence.region == "other":
                continue
            samples.append(
                InstructionSample(
                    image_id=record.image_id,
                    question=REGION_QUESTION_TEMPLATE.format(region=sentence.region),
                    response=sentence.text,
                )
            )
    return samples


def write_captions(path: str | Path, records: Iterable[CaptionRecord]) -> int:
    """Write caption records as JSONL."""
    return write_jsonl(path, (record.to_json() for record in records))


def read_captions(path: str | Path) -> list[CaptionRecord]:
    """Read caption records from JSONL."""
    return [CaptionRecord.model_validate(row) for row in read_jsonl(path)]


def write_instructions(path: str | Path, samples: Iterable[InstructionSample]) -> int:
    """Write instruction samples as JSONL."""
    return write_jsonl(path, (sample.model_dump(mode="json") for sample in samples))


def read_instructions(path: str | Path) -> list[InstructionSample]:
    """Read instruction samples from JSONL."""
    return [InstructionSample.model_validate(row) for row in read_jsonl(path)]


def captions_by_image(records: Iterable[CaptionRecord]) -> dict[str, list[str]]:
    """Map image id to its caption sentences, skipping failed or empty records."""
    return {record.image_id: [s.text for s in record.sentences] for record in records if record.ok and record.sentences}
