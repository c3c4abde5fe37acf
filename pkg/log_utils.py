"""
ロガー構築と関数トレース用デコレータ

・ファイル   : DEBUG 以上を 1 MB × 5 世代で保存
・コンソール : INFO 以上 (tqdm の進捗バーを崩さないよう tqdm.write 経由)
"""

import logging
import os
import time
from functools import wraps
from logging.handlers import RotatingFileHandler
from pathlib import Path

from tqdm import tqdm

LOGGER_NAME = "SlposLogger"


class TqdmLoggingHandler(logging.Handler):
    def __init__(self, level=logging.NOTSET):
        super().__init__(level)

    def emit(self, record):
        try:
            tqdm.write(self.format(record))
            self.flush()
        except Exception:
            self.handleError(record)


def get_logger(name: str | None = None) -> logging.Logger:
    """モジュール用の子ロガー (ハンドラは付けない)"""
    return logging.getLogger(f"{LOGGER_NAME}.{name}" if name else LOGGER_NAME)


def build_logger(log_dir: Path | None = None, console_level: str | None = None) -> logging.Logger:
    """
    SlposLogger にハンドラを取り付けて返す。
    何度呼んでもハンドラが重複しないよう、毎回クリアしてから付け直す。
    """
    logger = logging.getLogger(LOGGER_NAME)
    for h in list(logger.handlers):
        h.close()
    logger.handlers.clear()
    logger.setLevel(logging.DEBUG)

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        h_file = RotatingFileHandler(
            log_dir / "slpos_debug.log", maxBytes=1_000_000, backupCount=5, encoding="utf-8"
        )
        h_file.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(name)s: %(message)s"))
        h_file.setLevel(logging.DEBUG)
        logger.addHandler(h_file)

    level_name = (console_level or os.getenv("SLPOS_LOG_LEVEL", "INFO")).upper()
    h_term = TqdmLoggingHandler(level=getattr(logging, level_name, logging.INFO))
    h_term.setFormatter(logging.Formatter("   %(message)s"))
    logger.addHandler(h_term)

    logger.propagate = False
    return logger


def log_io(mask: int | None = 400):
    """
    関数の入出力と処理時間を DEBUG で記録する。
    mask=None なら戻り値を全文、数値ならその文字数だけログに残す
    """
    def _decorator(func):
        @wraps(func)
        def _wrapper(*args, **kwargs):
            t0 = time.time()
            logger = get_logger(func.__module__)

            def _short(v):
                if isinstance(v, (list, tuple)) and len(v) > 10:
                    return f"<{type(v).__name__} len={len(v)}>"
                s = repr(v)
                return s if mask is None or len(s) <= mask else s[:mask] + "..."

            in_args = [_short(a) for a in args]
            in_kwargs = {k: _short(v) for k, v in kwargs.items()}
            logger.debug(f"[IN ] {func.__name__} args={in_args} kwargs={in_kwargs}")
            try:
                out = func(*args, **kwargs)
                elapsed = time.time() - t0
                logger.debug(f"[OUT] {func.__name__} ({elapsed:.2f}s) -> {_short(out)}")
                return out
            except Exception:
                logger.exception(f"[ERR] {func.__name__}")
                raise
        return _wrapper
    return _decorator
