from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from custos.management.base import CustosCommand, Opcao, carregar_treino
from custos.services.attribution import (
    COHORTS,
    TOTAL_COST,
    AttributionConfig,
    cohort_attribution,
    select_cohort,
    write_attribution,
)
from custos.services.claims_data import COST_CATEGORIES, load_dataset
from custos.services.evaluation import filter_eligible
from custos.services.vocab_encoder import truncate_observation


def alvo(valor: str) -> str:
    """Aceita ``total_cost``, ``hospital`` ou ``category=hospital``."""
    if valor.startswith("category="):
        valor = valor.split("=", 1)[1]
    if valor != TOTAL_COST and valor not in COST_CATEGORIES:
        raise CommandError(f"alvo desconhecido: {valor} (use {TOTAL_COST} ou uma de {list(COST_CATEGORIES)})")
    return valor


class Command(CustosCommand):
    help = "Gradientes integrados de um modelo treinado sobre uma coorte do conjunto de teste"
    subcomando = "attribute"
    opcoes = (
        Opcao("model_dir", str, None, "Diretório de saída do comando train", flag="--model"),
        Opcao("data", str, None, "JSONL com as fichas da coorte"),
        Opcao("cohort", str, "increasers", "Coorte", escolhas=tuple(COHORTS)),
        Opcao("target", str, TOTAL_COST, "total_cost ou category=<categoria>"),
        Opcao("steps", int, 300, "Pontos da soma de Riemann"),
        Opcao("normalization", str, "patients", "Denominador do IG normalizado", escolhas=("patients", "occurrences")),
        Opcao("threshold", float, 100.0, "Fator de mudança que define a coorte"),
        Opcao("offset", float, 10.0, "Euros somados antes do fator de mudança"),
        Opcao("top_k", int, 10, "Linhas do ranking resumido"),
        Opcao("model_name", str, None, "Rótulo do modelo nos CSV"),
        Opcao("quarters", int, lambda: settings.CUSTOS_QUARTERS, "Trimestres observados nos dados"),
    )

    def completar(self, config):
        config["target"] = alvo(config["target"])

    def validar(self, config):
        if not config["model_dir"] or not Path(config["model_dir"]).is_dir():
            raise CommandError(f"diretório de modelo não encontrado: {config['model_dir']}")
        if not config["data"] or not Path(config["data"]).is_file():
            raise CommandError(f"arquivo de dados não encontrado: {config['data']}")
        if config["top_k"] < 1:
            raise CommandError("--top-k deve ser positivo")
        self.attribution_config(config)

    def attribution_config(self, config) -> AttributionConfig:
        return AttributionConfig(steps=config["steps"], target=config["target"], normalization=config["normalization"])

    def entradas(self, config):
        return [Path(config["data"]), Path(config["model_dir"]) / "model.bin"]

    def executar(self, config, saida: Path):
        treino = carregar_treino(config["model_dir"])
        fichas = filter_eligible(load_dataset(config["data"], quarters=config["quarters"]))
        coorte = select_cohort(fichas, config["cohort"], config["threshold"], config["offset"])
        if treino.keep_years:
            coorte = [truncate_observation(f, treino.keep_years) for f in coorte]
        relatorio = cohort_attribution(treino.modelo, coorte, treino.vocab, self.attribution_config(config))

        nome = config["model_name"] or treino.modelo.kind
        artefatos = write_attribution(relatorio, saida, nome)
        artefatos["top"] = saida / "attribution_top.csv"
        relatorio.top(config["top_k"]).to_csv(artefatos["top"], index=False)
        return artefatos
