"""
Base comum dos comandos do pipeline.

Cada comando declara suas opções uma única vez (``opcoes``); a configuração
efetiva é resolvida na ordem padrões < settings < arquivo --config <
manifesto --from-manifest < flags explícitas, validada antes de qualquer
leitura de dados, e ecoada no manifesto gravado no diretório de saída.
"""
import argparse
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from custos.services.attribution import AttributionError
from custos.services.baselines import BaselineError
from custos.services.claims_data import DatasetError
from custos.services.evaluation import EvaluationError
from custos.services.manifest import (
    STATUS_FAILED,
    ManifestError,
    RunManifest,
    fingerprint,
    read_config_file,
)
from custos.services.model_file import ModelFileError, load_model
from custos.services.network import NetworkError
from custos.services.synthetic import SyntheticSpecError
from custos.services.trainer import TrainingError
from custos.services.vocab_encoder import CodeVocabulary, VocabularyError

logger = logging.getLogger(__name__)

DOMAIN_ERRORS = (
    AttributionError,
    BaselineError,
    DatasetError,
    EvaluationError,
    ManifestError,
    ModelFileError,
    NetworkError,
    SyntheticSpecError,
    TrainingError,
    VocabularyError,
)


@dataclass(frozen=True)
class Opcao:
    nome: str
    cast: object = str
    padrao: object = None
    ajuda: str = ""
    escolhas: tuple | None = None
    flag: str | None = None

    @property
    def argumento(self) -> str:
        return self.flag or "--" + self.nome.replace("_", "-")


class CustosCommand(BaseCommand):
    requires_system_checks = []
    subcomando = ""
    opcoes: tuple[Opcao, ...] = ()

    def todas_opcoes(self) -> tuple[Opcao, ...]:
        return (*self.opcoes, Opcao("output", str, None, "Diretório de saída dos artefatos"))

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Arquivo chave=valor com a configuração")
        parser.add_argument("--from-manifest", dest="from_manifest", help="Repete a execução descrita no manifesto")
        for opcao in self.todas_opcoes():
            extra = {"dest": opcao.nome, "default": argparse.SUPPRESS, "help": opcao.ajuda}
            if opcao.cast is bool:
                parser.add_argument(opcao.argumento, action=argparse.BooleanOptionalAction, **extra)
            elif isinstance(opcao.cast, list):
                parser.add_argument(opcao.argumento, nargs="+", type=opcao.cast[0], **extra)
            else:
                parser.add_argument(opcao.argumento, type=opcao.cast, choices=opcao.escolhas, **extra)

    def padroes(self) -> dict:
        valores = {o.nome: o.padrao() if callable(o.padrao) else o.padrao for o in self.opcoes}
        valores["output"] = str(Path(settings.CUSTOS_ARTIFACTS_DIR) / self.subcomando)
        return valores

    def resolver(self, options: dict) -> dict:
        esquema = {o.nome: o.cast for o in self.todas_opcoes()}
        config = self.padroes()
        if options.get("config"):
            config.update(read_config_file(options["config"], esquema))
        if options.get("from_manifest"):
            manifesto = RunManifest.load(options["from_manifest"])
            if manifesto.subcommand != self.subcomando:
                raise ManifestError(
                    f"manifesto é de '{manifesto.subcommand}', não de '{self.subcomando}'"
                )
            config.update({k: v for k, v in manifesto.config.items() if k in esquema})
        config.update({k: v for k, v in options.items() if k in esquema})
        for opcao in self.todas_opcoes():
            if opcao.escolhas and config.get(opcao.nome) not in opcao.escolhas:
                raise CommandError(f"valor inválido para --{opcao.nome}: {config.get(opcao.nome)!r}")
        self.completar(config)
        self.validar(config)
        return config

    def completar(self, config: dict) -> None:
        """Preenche padrões que dependem de outras opções."""

    def validar(self, config: dict) -> None:
        """Checagens de flags antes de tocar nos dados."""

    def entradas(self, config: dict) -> list[Path]:
        """Arquivos de entrada cujo conteúdo entra no fingerprint do manifesto."""
        return []

    def executar(self, config: dict, saida: Path) -> dict[str, Path]:
        raise NotImplementedError

    def handle(self, *args, **options):
        inicio = time.perf_counter()
        try:
            config = self.resolver(options)
        except DOMAIN_ERRORS as e:
            raise CommandError(str(e)) from e
        saida = Path(config["output"])
        manifesto = RunManifest(subcommand=self.subcomando, config=config, seed=config.get("seed"))

        try:
            artefatos = self.executar(config, saida)
            entradas = self.entradas(config) or [artefatos[k] for k in ("dataset",) if k in artefatos]
            manifesto.dataset_fingerprint = fingerprint(entradas) if entradas else None
        except (*DOMAIN_ERRORS, OSError) as e:
            manifesto.status = STATUS_FAILED
            manifesto.error = str(e)
            manifesto.wall_seconds = time.perf_counter() - inicio
            self._gravar_manifesto(manifesto, saida)
            raise CommandError(f"{self.subcomando} falhou: {e}") from e

        manifesto.artifacts = {nome: _relativo(path, saida) for nome, path in sorted(artefatos.items())}
        manifesto.wall_seconds = time.perf_counter() - inicio
        path = self._gravar_manifesto(manifesto, saida)
        self.stdout.write(self.style.SUCCESS(f"{self.subcomando} concluído: {len(artefatos)} artefatos em {saida}"))
        logger.info("Manifesto em %s", path)

    def _gravar_manifesto(self, manifesto: RunManifest, saida: Path):
        try:
            return manifesto.write(saida)
        except OSError as e:
            raise CommandError(f"não foi possível gravar o manifesto em {saida}: {e}") from e


def _relativo(path: Path, base: Path) -> str:
    try:
        return str(Path(path).relative_to(base))
    except ValueError:
        return str(path)


@dataclass(frozen=True)
class Treino:
    """Modelo treinado carregado do diretório de saída do comando train."""

    diretorio: Path
    modelo: object
    vocab: CodeVocabulary
    config: dict

    @property
    def keep_years(self) -> int | None:
        return self.config.get("keep_years")

    @property
    def quarters(self) -> int:
        return self.config.get("quarters")


def carregar_treino(diretorio: str | Path) -> Treino:
    """Lê model.bin, vocabulary.csv e o manifesto gravados por ``train``."""
    diretorio = Path(diretorio)
    manifesto = RunManifest.load(diretorio)
    if manifesto.subcommand != "train":
        raise ManifestError(f"{diretorio} não é saída do comando train")
    if manifesto.status == STATUS_FAILED:
        raise ManifestError(f"o treino em {diretorio} falhou: {manifesto.error}")
    modelo = load_model(diretorio / manifesto.artifacts.get("model", "model.bin"))
    vocab = CodeVocabulary.from_csv(
        diretorio / manifesto.artifacts.get("vocabulary", "vocabulary.csv"),
        min_count=manifesto.config.get("min_count", 0),
    )
    return Treino(diretorio=diretorio, modelo=modelo, vocab=vocab, config=manifesto.config)
