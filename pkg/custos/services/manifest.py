"""
Manifesto de execução e leitura de arquivos de configuração ``chave=valor``.

O manifesto guarda a configuração resolvida de um comando, o hash dos dados de
entrada e os artefatos gerados; é suficiente para repetir a execução.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import environ
from django.core.exceptions import ImproperlyConfigured

from custos import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
STATUS_OK = "concluido"
STATUS_FAILED = "falhou"


class ManifestError(Exception): ...


def fingerprint(paths: Iterable[str | Path]) -> str:
    """SHA-256 do conteúdo dos arquivos, na ordem dada."""
    digest = hashlib.sha256()
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"arquivo para fingerprint não encontrado: {path}")
        with path.open("rb") as arquivo:
            for bloco in iter(lambda: arquivo.read(1 << 20), b""):
                digest.update(bloco)
    return digest.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None = None
    dataset_fingerprint: str | None = None
    artifacts: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    library_version: str = __version__
    status: str = STATUS_OK
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        logger.info("Manifesto gravado em %s (status=%s)", path, self.status)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.is_file():
            raise ManifestError(f"manifesto não encontrado: {path}")
        try:
            dados = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ManifestError(f"manifesto inválido em {path}: {e.msg}") from e
        campos = set(cls.__dataclass_fields__)
        if not isinstance(dados, dict) or not {"subcommand", "config"} <= set(dados):
            raise ManifestError(f"manifesto sem subcommand/config: {path}")
        return cls(**{k: v for k, v in dados.items() if k in campos})


def _ler_valor(env: environ.Env, chave: str, cast):
    if cast is bool:
        return env.bool(chave)
    if cast is int:
        return env.int(chave)
    if cast is float:
        return env.float(chave)
    if isinstance(cast, list):
        return env.list(chave, cast=cast[0])
    return env.str(chave)


def read_config_file(path: str | Path, schema: Mapping[str, object]) -> dict:
    """
    Lê um arquivo ``chave=valor`` com o parser do django-environ, sem tocar no
    ambiente do processo. ``schema`` mapeia chave -> tipo (int, float, bool, str
    ou [tipo] para listas separadas por vírgula).
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"arquivo de configuração não encontrado: {path}")

    class ArquivoEnv(environ.Env):
        ENVIRON = {}

    ArquivoEnv.read_env(str(path), overwrite=True)
    desconhecidas = sorted(set(ArquivoEnv.ENVIRON) - set(schema))
    if desconhecidas:
        raise ManifestError(f"chaves desconhecidas em {path}: {desconhecidas}")

    env = ArquivoEnv()
    valores = {}
    for chave in ArquivoEnv.ENVIRON:
        try:
            valores[chave] = _ler_valor(env, chave, schema[chave])
        except (ValueError, ImproperlyConfigured) as e:
            raise ManifestError(f"valor inválido para '{chave}' em {path}: {e}") from e
    logger.info("Configuração lida de %s: %s", path, sorted(valores))
    return valores
