import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from custos.management.base import CustosCommand, Opcao
from custos.services.claims_data import load_dataset
from custos.services.model_file import save_model
from custos.services.trainer import (
    LossLog,
    NetworkArch,
    TrainConfig,
    train_ensemble,
    train_network,
    train_ridge,
)
from custos.services.vocab_encoder import build_vocabulary, coverage, truncate_observation

logger = logging.getLogger(__name__)


class Command(CustosCommand):
    help = "Treina a rede, a ridge ou um ensemble e grava model.bin, vocabulary.csv e loss_log.csv"
    subcomando = "train"
    opcoes = (
        Opcao("model", str, "network", "Tipo de modelo", escolhas=("network", "ridge", "ensemble")),
        Opcao("data", str, None, "JSONL de treino"),
        Opcao("member", str, "network", "Tipo dos membros do ensemble", escolhas=("network", "ridge")),
        Opcao("k", int, 5, "Membros do ensemble"),
        Opcao("epochs", int, 25, "Épocas"),
        Opcao("batch_size", int, None, "Tamanho do lote (32 rede, 128 ridge)", flag="--batch"),
        Opcao("seed", int, 0, "Semente da execução"),
        Opcao("shuffle", bool, True, "Reembaralha a cada época"),
        Opcao("ridge_lambda", float, 0.1, "Penalidade l2 da ridge", flag="--lambda"),
        Opcao("learning_rate", float, 1e-3, "Passo do ADAM"),
        Opcao("hidden", int, 50, "Largura das camadas ocultas"),
        Opcao("dropout", float, 0.25, "Taxa de dropout nas camadas ocultas"),
        Opcao("joint", bool, True, "Uma rede com 7 saídas (ou uma rede por categoria com --no-joint)"),
        Opcao("normalize_targets", bool, True, "Treina com alvos divididos pela raiz do quadrado médio"),
        Opcao("min_count", int, lambda: settings.CUSTOS_MIN_COUNT, "Ocorrências mínimas (exclusivo) por código"),
        Opcao("quarters", int, lambda: settings.CUSTOS_QUARTERS, "Trimestres observados nos dados"),
        Opcao("keep_years", int, None, "Usa só os últimos N anos da observação"),
    )

    def completar(self, config):
        if config["batch_size"] is None:
            membro = config["member"] if config["model"] == "ensemble" else config["model"]
            config["batch_size"] = TrainConfig.for_model(membro).batch_size

    def validar(self, config):
        if not config["data"]:
            raise CommandError("informe --data com o JSONL de treino")
        if not Path(config["data"]).is_file():
            raise CommandError(f"arquivo de treino não encontrado: {config['data']}")
        if config["k"] < 1:
            raise CommandError("--k deve ser positivo")
        self.train_config(config)
        self.arch(config)

    def entradas(self, config):
        return [Path(config["data"])]

    def train_config(self, config) -> TrainConfig:
        return TrainConfig(
            epochs=config["epochs"],
            batch_size=config["batch_size"],
            seed=config["seed"],
            shuffle=config["shuffle"],
            lambda_=config["ridge_lambda"],
            learning_rate=config["learning_rate"],
            joint=config["joint"],
            normalize_targets=config["normalize_targets"],
        )

    def arch(self, config) -> NetworkArch:
        return NetworkArch(hidden=config["hidden"], dropout=config["dropout"])

    def executar(self, config, saida: Path):
        fichas = load_dataset(config["data"], quarters=config["quarters"])
        if config["keep_years"]:
            fichas = [truncate_observation(f, config["keep_years"]) for f in fichas]
        vocab = build_vocabulary(fichas, config["min_count"])
        logger.info("Cobertura do vocabulário no treino: %.3f", coverage(fichas, vocab))

        treino = self.train_config(config)
        if config["model"] == "network":
            modelo, log = train_network(fichas, vocab, treino, self.arch(config))
        elif config["model"] == "ridge":
            modelo, log = train_ridge(fichas, vocab, treino)
        else:
            modelo, logs = train_ensemble(fichas, vocab, treino, config["k"], config["member"], self.arch(config))
            log = LossLog.averaged(logs)

        saida.mkdir(parents=True, exist_ok=True)
        return {
            "model": save_model(modelo, saida / "model.bin"),
            "vocabulary": vocab.to_csv(saida / "vocabulary.csv"),
            "loss_log": log.to_csv(saida / "loss_log.csv"),
        }
