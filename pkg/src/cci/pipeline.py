"""End-to-end orchestration: config resolution, staged execution, checkpoints.

A run walks elements -> persona -> plot -> outline -> draft, checkpointing
each stage (and each drafted leaf) under its run directory, so an interrupted
run resumes from the last completed point. Mock runs with equal config and
seed rebuild byte-identical bundles, resumed or not: the bundle JSON carries
no wall-clock data and mocks are stateless.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .cs_dataset import BaselineScorer, FallbackScorer, RemoteScorer
from .errors import CCIError, ConfigError
from .imagination import ElementMode, StoryElements, imagine_all
from .multiwriter import DraftState, MWParams, StoryBundle, run_draft
from .planner import OutlineParams, OutlineTree, build_outline
from .providers import ProviderConfig, ProviderSet, http_provider_set, mock_provider_set
from .providers.types import Usage
from .specification import (
    MainPlotSpec,
    Persona,
    WhyChainParams,
    chain_of_ask_why,
    specify_main_plot,
    specify_persona,
)

log = logging.getLogger(__name__)

PROVIDER_CAPABILITIES = ("chat", "image", "vision", "embedding")
WOMW_MAX_PASSAGES = 3


@dataclass(frozen=True)
class ScorerConfig:
    mode: str = "baseline"  # "baseline" | "remote"
    endpoint: str = ""
    timeout: float = 10.0

    def __post_init__(self):
        if self.mode not in ("baseline", "remote"):
            raise ConfigError(f"scorer mode must be baseline or remote, got {self.mode!r}")
        if self.mode == "remote" and not self.endpoint:
            raise ConfigError("remote scorer requires an endpoint")

    def to_dict(self) -> dict:
        return {"mode": self.mode, "endpoint": self.endpoint, "timeout": self.timeout}

    @classmethod
    def from_dict(cls, data: dict) -> "ScorerConfig":
        return cls(**data)


@dataclass(frozen=True)
class PipelineConfig:
    providers: dict = field(default_factory=dict)  # capability -> ProviderConfig
    outline: OutlineParams = field(default_factory=OutlineParams)
    mw: MWParams = field(default_factory=MWParams)
    why_chain: WhyChainParams = field(default_factory=WhyChainParams)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    element_mode: ElementMode = ElementMode.IG
    no_ig: bool = False
    no_mw: bool = False
    seed: int = 0
    mock: bool = False
    output_dir: str = "runs"
    run_id: str | None = None
    user_images: dict = field(default_factory=dict)  # slot -> path
    persona_update_per_leaf: bool = False

    def resolved(self) -> "PipelineConfig":
        """Apply ablation semantics: text-only elements without image guidance,
        and the longer passage budget when injection is disabled."""
        cfg = self
        if cfg.no_ig:
            if cfg.element_mode is ElementMode.USER_IMAGES:
                raise ConfigError("--no-ig cannot be combined with user images")
            cfg = replace(cfg, element_mode=ElementMode.TEXT_ONLY)
        if cfg.no_mw:
            cfg = replace(
                cfg,
                outline=replace(cfg.outline, max_passages_per_node=WOMW_MAX_PASSAGES),
            )
        if not cfg.mock:
            missing = [c for c in PROVIDER_CAPABILITIES if c not in cfg.providers]
            if missing:
                raise ConfigError(f"missing provider configs for: {missing}")
        if cfg.element_mode is ElementMode.USER_IMAGES:
            missing_slots = [
                s for s in ("character", "background", "mainplot") if not cfg.user_images.get(s)
            ]
            if missing_slots:
                raise ConfigError(f"user-images mode requires image paths for: {missing_slots}")
        return cfg

    def echo(self) -> dict:
        """Everything needed to replay the run in mock mode, key-stable."""
        return {
            "providers": {
                cap: {
                    "endpoint_url": pc.endpoint_url,
                    "api_key_env": pc.api_key_env,
                    "model_id": pc.model_id,
                    "timeout": pc.timeout,
                    "max_retries": pc.max_retries,
                    "temperature": pc.temperature,
                    "top_p": pc.top_p,
                    "frequency_penalty": pc.frequency_penalty,
                    "presence_penalty": pc.presence_penalty,
                }
                for cap, pc in sorted(self.providers.items())
            },
            "outline": self.outline.to_dict(),
            "mw": self.mw.to_dict(),
            "why_chain": {"n": self.why_chain.n, "m": self.why_chain.m},
            "scorer": self.scorer.to_dict(),
            "element_mode": self.element_mode.value,
            "no_ig": self.no_ig,
            "no_mw": self.no_mw,
            "seed": self.seed,
            "mock": self.mock,
            "user_images": dict(sorted(self.user_images.items())),
            "persona_update_per_leaf": self.persona_update_per_leaf,
        }

    def effective_run_id(self) -> str:
        if self.run_id:
            return self.run_id
        digest = hashlib.sha256(
            json.dumps(self.echo(), sort_keys=True).encode("utf-8")
        ).hexdigest()
        return f"run-{self.seed}-{digest[:8]}"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        providers = {
            cap: ProviderConfig.from_dict(raw)
            for cap, raw in data.get("providers", {}).items()
        }
        unknown = set(providers) - set(PROVIDER_CAPABILITIES)
        if unknown:
            raise ConfigError(f"unknown provider capabilities: {sorted(unknown)}")
        return cls(
            providers=providers,
            outline=OutlineParams.from_dict(data["outline"]) if "outline" in data else OutlineParams(),
            mw=MWParams.from_dict(data["mw"]) if "mw" in data else MWParams(),
            why_chain=WhyChainParams(**data.get("why_chain", {})),
            scorer=ScorerConfig.from_dict(data["scorer"]) if "scorer" in data else ScorerConfig(),
            element_mode=ElementMode(data.get("element_mode", "ig")),
            no_ig=data.get("no_ig", False),
            no_mw=data.get("no_mw", False),
            seed=data.get("seed", 0),
            mock=data.get("mock", False),
            output_dir=data.get("output_dir", "runs"),
            run_id=data.get("run_id"),
            user_images=data.get("user_images", {}),
            persona_update_per_leaf=data.get("persona_update_per_leaf", False),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass
class RunManifest:
    run_id: str
    config_echo: dict
    seed: int
    created_at: str = field(default_factory=_now)
    updated_at: str = field(default_factory=_now)
    stages: dict = field(default_factory=dict)  # name -> {"status", "usage"}

    def mark(self, stage: str, status: str, usage: Usage | None = None) -> None:
        entry = self.stages.setdefault(stage, {"status": "pending", "usage": None})
        entry["status"] = status
        if usage is not None:
            entry["usage"] = {
                "prompt_tokens": usage.prompt_tokens,
                "completion_tokens": usage.completion_tokens,
            }
        self.updated_at = _now()

    def stage_done(self, stage: str) -> bool:
        return self.stages.get(stage, {}).get("status") == "done"

    def usage_total(self) -> dict:
        prompt = completion = 0
        for entry in self.stages.values():
            usage = entry.get("usage") or {}
            prompt += usage.get("prompt_tokens", 0)
            completion += usage.get("completion_tokens", 0)
        return {"prompt_tokens": prompt, "completion_tokens": completion}

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_echo": self.config_echo,
            "seed": self.seed,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "stages": self.stages,
            "usage_total": self.usage_total(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(
            run_id=data["run_id"],
            config_echo=data["config_echo"],
            seed=data["seed"],
            created_at=data["created_at"],
            updated_at=data["updated_at"],
            stages=data.get("stages", {}),
        )


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class PipelineRunner:
    """Executes one run inside its own run directory."""

    STAGES = ("elements", "persona", "plot", "outline", "draft")

    def __init__(self, config: PipelineConfig, providers: ProviderSet | None = None):
        self.config = config.resolved()
        if providers is not None:
            self.providers = providers
        elif self.config.mock:
            self.providers = mock_provider_set(self.config.seed)
        else:
            self.providers = http_provider_set(self.config.providers)
        self.scorer = self._build_scorer()
        self.run_id = self.config.effective_run_id()
        self.run_dir = Path(self.config.output_dir) / self.run_id
        self.checkpoints = self.run_dir / "checkpoints"
        self.manifest_path = self.run_dir / "manifest.json"
        self.bundle_path = self.run_dir / "bundle.json"

    def _build_scorer(self):
        baseline = BaselineScorer(self.providers.embedding)
        if self.config.scorer.mode == "remote":
            remote = RemoteScorer(self.config.scorer.endpoint, self.config.scorer.timeout)
            return FallbackScorer(remote, baseline)
        return baseline

    # --- stage plumbing -----------------------------------------------------

    def _load_manifest(self, resume: bool) -> RunManifest:
        if self.manifest_path.exists():
            manifest = RunManifest.from_dict(_read_json(self.manifest_path))
            if not resume:
                raise ConfigError(
                    f"run directory {self.run_dir} already exists; "
                    "resume it or choose a different run id"
                )
            if manifest.config_echo != self.config.echo():
                raise ConfigError(
                    "stored run config differs from the requested one; refusing to resume"
                )
            return manifest
        return RunManifest(
            run_id=self.run_id, config_echo=self.config.echo(), seed=self.config.seed
        )

    def _save_manifest(self, manifest: RunManifest) -> None:
        _write_json(self.manifest_path, manifest.to_dict())

    def _stage(self, manifest, name, compute, to_dict, from_dict, resume):
        path = self.checkpoints / f"{name}.json"
        if resume and manifest.stage_done(name) and path.exists():
            log.info("stage %s restored from checkpoint", name)
            return from_dict(_read_json(path))
        before = len(self.providers.ledger.snapshot())
        try:
            value = compute()
        except CCIError as exc:
            exc.stage = name  # type: ignore[attr-defined]
            manifest.mark(name, "failed")
            self._save_manifest(manifest)
            raise
        entries = self.providers.ledger.snapshot()[before:]
        usage = Usage(
            prompt_tokens=sum(u.prompt_tokens for _, u in entries),
            completion_tokens=sum(u.completion_tokens for _, u in entries),
        )
        _write_json(path, to_dict(value))
        manifest.mark(name, "done", usage)
        self._save_manifest(manifest)
        return value

    # --- the run ------------------------------------------------------------

    def run(self, resume: bool = False, stop_after: str | None = None) -> Path | None:
        """Execute (or continue) the run; returns the bundle path, or None when
        stopped early via `stop_after` (a stage name, for tests and tooling)."""
        if stop_after is not None and stop_after not in self.STAGES:
            raise ConfigError(f"unknown stage {stop_after!r}")
        manifest = self._load_manifest(resume)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self._save_manifest(manifest)

        elements: StoryElements = self._stage(
            manifest, "elements",
            lambda: imagine_all(
                self.config.element_mode, self.providers,
                user_image_paths=self.config.user_images or None,
            ),
            lambda v: v.to_dict(), StoryElements.from_dict, resume,
        )
        if stop_after == "elements":
            return None

        persona: Persona = self._stage(
            manifest, "persona",
            lambda: specify_persona(elements.character, elements.background, self.providers.chat),
            lambda v: v.to_dict(), Persona.from_dict, resume,
        )
        if stop_after == "persona":
            return None

        def compute_plot() -> MainPlotSpec:
            clarified, chain = chain_of_ask_why(
                elements.main_plot.description, persona, self.config.why_chain,
                self.providers.chat,
            )
            return specify_main_plot(
                clarified, persona, self.providers.chat,
                original=elements.main_plot.description, qa_chain=chain,
            )

        plot: MainPlotSpec = self._stage(
            manifest, "plot", compute_plot,
            lambda v: v.to_dict(), MainPlotSpec.from_dict, resume,
        )
        if stop_after == "plot":
            return None

        outline: OutlineTree = self._stage(
            manifest, "outline",
            lambda: build_outline(elements, persona, plot, self.config.outline, self.providers.chat),
            lambda v: v.to_dict(), OutlineTree.from_dict, resume,
        )
        if stop_after == "outline":
            return None

        bundle = self._draft_stage(manifest, elements, persona, plot, outline, resume)
        _write_json(self.bundle_path, bundle.to_dict())
        manifest.mark("draft", "done")
        self._save_manifest(manifest)
        return self.bundle_path

    def _draft_stage(self, manifest, elements, persona, plot, outline, resume) -> StoryBundle:
        state_path = self.checkpoints / "draft_state.json"
        state = None
        if resume and state_path.exists():
            state = DraftState.from_dict(_read_json(state_path))
            log.info("draft resumes at leaf index %d", state.next_leaf_index)
        before = len(self.providers.ledger.snapshot())
        # resumed runs accumulate onto the usage recorded by earlier processes
        prior = (manifest.stages.get("draft", {}).get("usage") or {}) if resume else {}
        prior_usage = Usage(
            prompt_tokens=prior.get("prompt_tokens", 0),
            completion_tokens=prior.get("completion_tokens", 0),
        )

        def usage_so_far() -> Usage:
            entries = self.providers.ledger.snapshot()[before:]
            return Usage(
                prompt_tokens=prior_usage.prompt_tokens
                + sum(u.prompt_tokens for _, u in entries),
                completion_tokens=prior_usage.completion_tokens
                + sum(u.completion_tokens for _, u in entries),
            )

        def on_leaf_complete(current_state: DraftState) -> None:
            _write_json(state_path, current_state.to_dict())
            manifest.mark("draft", "in_progress", usage_so_far())
            self._save_manifest(manifest)

        try:
            bundle = run_draft(
                outline, elements, persona, plot, self.config.mw, self.providers,
                self.scorer,
                seed=self.config.seed,
                config_echo=self.config.echo(),
                mw_enabled=not self.config.no_mw,
                update_per_leaf=self.config.persona_update_per_leaf,
                state=state,
                on_leaf_complete=on_leaf_complete,
            )
        except CCIError as exc:
            exc.stage = "draft"  # type: ignore[attr-defined]
            manifest.mark("draft", "failed")
            self._save_manifest(manifest)
            raise
        manifest.mark("draft", "done", usage_so_far())
        return bundle


def load_bundle(path: str | Path) -> StoryBundle:
    return StoryBundle.from_dict(_read_json(Path(path)))


def resume_config(output_dir: str | Path, run_id: str) -> PipelineConfig:
    """Rebuild the pipeline config of an existing run from its manifest."""
    manifest_path = Path(output_dir) / run_id / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest for run {run_id!r} under {output_dir}")
    manifest = RunManifest.from_dict(_read_json(manifest_path))
    echo = dict(manifest.config_echo)
    echo["output_dir"] = str(output_dir)
    echo["run_id"] = run_id
    return PipelineConfig.from_dict(echo)
