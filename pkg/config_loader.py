"""
実験設定ファイルの読み込み

・JSON (拡張子 .yaml / .yml なら YAML) を辞書として読む
・channel にプリセット名が書かれていれば presets/channel/<name>.yaml で置き換える
・--set key.path=value の上書きを適用する (値は JSON として解釈し、だめなら文字列)
・最後に Pydantic で検証する。未知のキーはここで弾かれる
"""

import json
import os
from pathlib import Path
from typing import Any, Sequence

import yaml
from dotenv import load_dotenv
from pydantic import Field, ValidationError

from errors import ConfigurationError, UsageError
from harness import ExperimentConfig, PslRequirement, SweepAxis
from schema import FrozenModel

CLI_KEYS = ("name", "sweep", "thresholds_m", "psl_table", "psl_levels")


def preset_dir() -> Path:
    return Path(os.getenv("SLPOS_PRESET_DIR", Path(__file__).parent / "presets"))


def load_env() -> dict:
    """.env を読み込み、CLI の既定値を返す"""
    load_dotenv()
    try:
        workers = int(os.getenv("SLPOS_WORKERS", "1"))
    except ValueError:
        raise ConfigurationError(f"SLPOS_WORKERS が整数ではありません: {os.getenv('SLPOS_WORKERS')}")
    return {"workers": max(1, workers), "log_level": os.getenv("SLPOS_LOG_LEVEL", "INFO")}


class SweepSpec(FrozenModel):
    axis: SweepAxis
    values: list[float] = Field(min_length=1)
    series_axis: SweepAxis | None = None
    series_values: list[float] = Field(default_factory=list)


class ExperimentFile(ExperimentConfig):
    """実験設定 + CLI だけが使うキー"""
    name: str = ""
    sweep: SweepSpec | None = None
    thresholds_m: list[float] = Field(default_factory=lambda: [0.5, 1.0, 1.5, 3.0])
    psl_table: str | None = None
    psl_levels: list[str] = Field(default_factory=list)

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig.model_validate(self.model_dump(exclude=set(CLI_KEYS)))


# ===============================================
#  読み込み
# ===============================================
def load_document(path: Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"設定ファイルが見つかりません: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            if path.suffix.lower() in (".yaml", ".yml"):
                doc = yaml.safe_load(f)
            else:
                doc = json.load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"{path} を解析できません: {e}")
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path} の最上位はオブジェクトである必要があります")
    return doc


def resolve_channel_preset(doc: dict) -> dict:
    name = doc.get("channel")
    if not isinstance(name, str):
        return doc
    path = preset_dir() / "channel" / f"{name}.yaml"
    if not path.exists():
        raise ConfigurationError(f"channel: 未知のプリセット名です: {name}")
    return {**doc, "channel": load_document(path)}


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise UsageError(f"--set は key=value 形式で指定してください: {text}")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise UsageError(f"--set のキーが空です: {text}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    doc = json.loads(json.dumps(doc))
    for text in overrides:
        parts, value = parse_override(text)
        node = doc
        for i, key in enumerate(parts[:-1]):
            nxt = node.get(key)
            if nxt is None:
                nxt = node[key] = {}
            if not isinstance(nxt, dict):
                raise ConfigurationError(f"{'.'.join(parts[: i + 1])} はオブジェクトではないため上書きできません")
            node = nxt
        node[parts[-1]] = value
    return doc


def format_validation_error(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        key = ".".join(str(p) for p in err["loc"])
        lines.append(f"{key}: {err['msg']}")
    return "; ".join(lines)


def validate_document(doc: dict) -> ExperimentFile:
    try:
        return ExperimentFile.model_validate(doc)
    except ValidationError as e:
        raise ConfigurationError(format_validation_error(e))


def load_experiment(path: Path, overrides: Sequence[str] = (), seed: int | None = None) -> ExperimentFile:
    doc = resolve_channel_preset(load_document(path))
    doc = apply_overrides(doc, overrides)
    # プリセット名の上書き (--set channel=urban-grid-like) にも対応する
    doc = resolve_channel_preset(doc)
    if seed is not None:
        doc["master_seed"] = seed
    return validate_document(doc)


def load_psl_table(path: Path | None = None) -> list[PslRequirement]:
    path = Path(path) if path else preset_dir() / "psl_table.yaml"
    doc = load_document(path)
    try:
        return [PslRequirement.model_validate(row) for row in doc.get("levels", [])]
    except ValidationError as e:
        raise ConfigurationError(f"{path}: {format_validation_error(e)}")


def select_levels(table: Sequence[PslRequirement], names: Sequence[str]) -> list[PslRequirement]:
    if not names:
        return list(table)
    by_name = {p.name: p for p in table}
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise ConfigurationError(f"psl_levels: PSL 表にない名前です: {unknown}")
    return [by_name[n] for n in names]
