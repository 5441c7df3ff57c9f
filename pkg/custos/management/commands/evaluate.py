import logging
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management.base import CommandError
from django.utils.text import slugify

from custos.management.base import CustosCommand, Opcao, carregar_treino
from custos.services.baselines import (
    BaselineError,
    LastYearBaseline,
    MeanPriorBaseline,
    OracleModel,
    RidgeModel,
)
from custos.services.claims_data import load_dataset
from custos.services.evaluation import (
    ROW_LAST_YEAR,
    ROW_MEAN_PRIOR,
    ROW_NETWORK,
    ROW_NETWORK_ENSEMBLE,
    ROW_ORACLE,
    ROW_RIDGE,
    ROW_RIDGE_ENSEMBLE,
    TABLE_ROWS,
    EvaluationError,
    change_table,
    cost_histogram,
    error_by_cost,
    evaluate_predictions,
    filter_eligible,
    fold_change_frame,
    metrics_table,
    write_curves,
    write_report_json,
)
from custos.services.network import NeuralNetworkModel
from custos.services.trainer import CategoryWiseModel, EnsembleModel
from custos.services.vocab_encoder import encode_many, truncate_observation

logger = logging.getLogger(__name__)

ROW_CATEGORY_WISE = "Neural network (per category)"


def nome_da_linha(modelo) -> str:
    if isinstance(modelo, EnsembleModel):
        return ROW_NETWORK_ENSEMBLE if modelo.member_kind == "network" else ROW_RIDGE_ENSEMBLE
    if isinstance(modelo, CategoryWiseModel):
        return ROW_CATEGORY_WISE
    if isinstance(modelo, RidgeModel):
        return ROW_RIDGE
    if isinstance(modelo, NeuralNetworkModel):
        return ROW_NETWORK
    raise EvaluationError(f"modelo sem linha na tabela: {type(modelo).__name__}")


def _ordem(nome: str) -> int:
    if nome in TABLE_ROWS:
        return TABLE_ROWS.index(nome)
    return len(TABLE_ROWS) + (1 if nome == ROW_ORACLE else 0)


class Command(CustosCommand):
    help = "Avalia modelos treinados e os baselines ingênuos no conjunto de teste"
    subcomando = "evaluate"
    opcoes = (
        Opcao("data", str, None, "JSONL de teste"),
        Opcao("models", [str], list, "Diretórios de saída do comando train"),
        Opcao("baselines", bool, True, "Inclui as linhas de último ano e média anterior"),
        Opcao("oracle", bool, False, "Inclui a linha com os custos verdadeiros como previsão"),
        Opcao("threshold", float, 100.0, "Fator de mudança para as coortes de aumento/redução"),
        Opcao("offset", float, 10.0, "Euros somados antes do fator de mudança"),
        Opcao("quarters", int, lambda: settings.CUSTOS_QUARTERS, "Trimestres observados nos dados"),
    )

    def validar(self, config):
        if not config["data"] or not Path(config["data"]).is_file():
            raise CommandError(f"arquivo de teste não encontrado: {config['data']}")
        for diretorio in config["models"]:
            if not Path(diretorio).is_dir():
                raise CommandError(f"diretório de modelo não encontrado: {diretorio}")
        if config["threshold"] <= 1 or config["offset"] <= 0:
            raise CommandError("--threshold deve ser > 1 e --offset > 0")

    def entradas(self, config):
        return [Path(config["data"])]

    def _previsoes(self, config, fichas) -> list[tuple[str, np.ndarray, bool]]:
        """(linha, custo total previsto, entra na análise de mudança)."""
        linhas = []
        if config["baselines"]:
            for nome, modelo in ((ROW_LAST_YEAR, LastYearBaseline()), (ROW_MEAN_PRIOR, MeanPriorBaseline())):
                try:
                    linhas.append((nome, modelo.predict_totals(None, fichas), nome != ROW_LAST_YEAR))
                except BaselineError as e:
                    logger.warning("Linha '%s' indisponível: %s", nome, e)
        for diretorio in config["models"]:
            treino = carregar_treino(diretorio)
            avaliadas = fichas
            if treino.keep_years:
                avaliadas = [truncate_observation(f, treino.keep_years) for f in fichas]
            X = encode_many(avaliadas, treino.vocab, avaliadas[0].quarters)
            linhas.append((nome_da_linha(treino.modelo), treino.modelo.predict_totals(X, avaliadas), True))
        if config["oracle"]:
            linhas.append((ROW_ORACLE, OracleModel().predict_totals(None, fichas), True))
        if not linhas:
            raise EvaluationError("nada a avaliar: informe --models, --baselines ou --oracle")

        vistos: dict[str, int] = {}
        unicas = []
        for nome, previsto, mudanca in linhas:
            vistos[nome] = vistos.get(nome, 0) + 1
            unicas.append((nome if vistos[nome] == 1 else f"{nome} #{vistos[nome]}", previsto, mudanca))
        return sorted(unicas, key=lambda linha: _ordem(linha[0]))

    def executar(self, config, saida: Path):
        fichas = filter_eligible(load_dataset(config["data"], quarters=config["quarters"]))
        if any(f.target is None for f in fichas):
            raise EvaluationError("todas as fichas de teste precisam de alvo")
        y = np.array([f.target.total for f in fichas])
        com_custos = all(f.costs_available for f in fichas)
        ultimo_ano = np.array([f.last_year_cost for f in fichas]) if com_custos else None
        if not com_custos:
            logger.warning("Fichas sem eventos de custo: análise de mudança desativada")

        previsoes = self._previsoes(config, fichas)
        por_nome = {nome: previsto for nome, previsto, _ in previsoes}
        saida.mkdir(parents=True, exist_ok=True)
        artefatos = {}
        relatorios, erros = [], []
        for nome, previsto, mudanca in previsoes:
            slug = slugify(nome)
            relatorio = evaluate_predictions(
                nome, y, previsto, ultimo_ano if mudanca else None,
                threshold=config["threshold"], offset=config["offset"],
            )
            relatorios.append(relatorio)
            artefatos[f"report_{slug}"] = write_report_json(relatorio, saida / "reports" / f"{slug}.json")
            for path in write_curves(relatorio, saida / "curves", slug):
                artefatos[f"curve_{path.stem}"] = path
            erros.append(relatorio.error_by_cost_bin.assign(model=nome))
            if relatorio.change_analysis is not None:
                path = saida / "fold_changes" / f"{slug}.csv"
                path.parent.mkdir(parents=True, exist_ok=True)
                fold_change_frame(
                    [f.patient_id for f in fichas], ultimo_ano, y, previsto,
                    relatorio.change_analysis.labels, config["offset"],
                ).to_csv(path, index=False)
                artefatos[f"fold_changes_{slug}"] = path

        artefatos["table1"] = saida / "table1.csv"
        metrics_table(relatorios).to_csv(artefatos["table1"], index=False)
        artefatos["change_detection"] = saida / "change_detection.csv"
        change_table(relatorios).to_csv(artefatos["change_detection"], index=False)
        artefatos["error_by_cost"] = saida / "error_by_cost.csv"
        pd.concat(erros, ignore_index=True).to_csv(artefatos["error_by_cost"], index=False)
        artefatos["cost_histogram"] = saida / "cost_histogram.csv"
        cost_histogram(y).to_csv(artefatos["cost_histogram"], index=False)

        for rede, ridge in ((ROW_NETWORK, ROW_RIDGE), (ROW_NETWORK_ENSEMBLE, ROW_RIDGE_ENSEMBLE)):
            if rede in por_nome and ridge in por_nome:
                path = saida / f"error_difference_{slugify(rede)}.csv"
                error_by_cost(y, por_nome[rede], reference=por_nome[ridge]).to_csv(path, index=False)
                artefatos[f"error_difference_{slugify(rede)}"] = path
        return artefatos
