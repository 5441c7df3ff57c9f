from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from custos.management.base import CustosCommand, Opcao
from custos.services.claims_data import load_dataset
from custos.services.sweep import SweepSettings, metric_grids, run_sweep


class Command(CustosCommand):
    help = "Treina e avalia rede e ridge numa grade de (pacientes de treino, anos de observação)"
    subcomando = "sweep"
    opcoes = (
        Opcao("train_data", str, None, "JSONL de treino"),
        Opcao("test_data", str, None, "JSONL de teste"),
        Opcao("patients", [int], lambda: [1000, 4000], "Quantidades de pacientes de treino"),
        Opcao("years", [int], lambda: [1, 3, 6], "Anos de observação mantidos"),
        Opcao("epochs", int, 25, "Épocas"),
        Opcao("seed", int, 0, "Semente da execução"),
        Opcao("learning_rate", float, 1e-3, "Passo do ADAM"),
        Opcao("ridge_lambda", float, 0.1, "Penalidade l2 da ridge", flag="--lambda"),
        Opcao("hidden", int, 50, "Largura das camadas ocultas"),
        Opcao("dropout", float, 0.25, "Taxa de dropout"),
        Opcao("min_count", int, lambda: settings.CUSTOS_MIN_COUNT, "Ocorrências mínimas (exclusivo) por código"),
        Opcao("quarters", int, lambda: settings.CUSTOS_QUARTERS, "Trimestres observados nos dados"),
        Opcao("workers", int, lambda: settings.CUSTOS_WORKERS, "Processos paralelos"),
    )

    def validar(self, config):
        for chave in ("train_data", "test_data"):
            if not config[chave] or not Path(config[chave]).is_file():
                raise CommandError(f"arquivo não encontrado para --{chave.replace('_', '-')}: {config[chave]}")
        if any(n < 1 for n in config["patients"]) or any(a < 1 for a in config["years"]):
            raise CommandError("--patients e --years precisam de valores positivos")
        if config["workers"] < 1:
            raise CommandError("--workers deve ser positivo")

    def entradas(self, config):
        return [Path(config["train_data"]), Path(config["test_data"])]

    def executar(self, config, saida: Path):
        treino = load_dataset(config["train_data"], quarters=config["quarters"])
        teste = load_dataset(config["test_data"], quarters=config["quarters"])
        ajustes = SweepSettings(
            epochs=config["epochs"],
            seed=config["seed"],
            learning_rate=config["learning_rate"],
            ridge_lambda=config["ridge_lambda"],
            hidden=config["hidden"],
            dropout=config["dropout"],
            min_count=config["min_count"],
        )
        celulas = run_sweep(treino, teste, config["patients"], config["years"], ajustes, config["workers"])

        saida.mkdir(parents=True, exist_ok=True)
        artefatos = {"cells": saida / "sweep_cells.csv"}
        celulas.to_csv(artefatos["cells"], index=False)
        (saida / "grids").mkdir(exist_ok=True)
        for nome, grade in metric_grids(celulas).items():
            path = saida / "grids" / f"{nome}.csv"
            grade.to_csv(path)
            artefatos[f"grid_{nome}"] = path
        return artefatos
