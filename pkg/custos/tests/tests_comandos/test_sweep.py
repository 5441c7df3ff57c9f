import numpy as np
import pandas as pd
import pytest

from custos.services.claims_data import DatasetError
from custos.services.evaluation import METRIC_COLUMNS, filter_eligible
from custos.services.sweep import STATUS_MISSING, STATUS_OK, SweepSettings, metric_grids, run_cell, run_sweep

AJUSTES = SweepSettings(epochs=1, hidden=4, min_count=2)


class TestRunCell:
    """Testes de uma célula da varredura"""

    def test_celula_viavel(self, dados_sinteticos):
        treino, teste = dados_sinteticos.records[:100], dados_sinteticos.records[250:]
        linhas = run_cell(treino, teste, 40, 2, AJUSTES)
        assert [l["model"] for l in linhas] == ["network", "ridge"]
        assert all(l["status"] == STATUS_OK for l in linhas)
        assert all(np.isfinite(l["mape"]) for l in linhas)

    def test_pacientes_insuficientes(self, dados_sinteticos):
        linhas = run_cell(dados_sinteticos.records[:10], dados_sinteticos.records[250:], 40, 1, AJUSTES)
        assert {l["status"] for l in linhas} == {STATUS_MISSING}
        assert "apenas 10 fichas" in linhas[0]["error"]
        assert np.isnan(linhas[0]["r_squared"])

    def test_anos_alem_da_observacao(self, dados_sinteticos):
        linhas = run_cell(dados_sinteticos.records[:50], dados_sinteticos.records[250:], 20, 7, AJUSTES)
        assert "observação tem só 6 anos" in linhas[1]["error"]


class TestRunSweep:
    def test_ordem_da_grade(self, dados_sinteticos):
        celulas = run_sweep(dados_sinteticos.records[:60], dados_sinteticos.records[250:], [30, 1000], [1], AJUSTES)
        assert list(celulas.columns) == ["patients", "years", "model", *METRIC_COLUMNS, "status", "error"]
        assert celulas["patients"].tolist() == [30, 30, 1000, 1000]
        assert celulas["status"].tolist() == [STATUS_OK, STATUS_OK, STATUS_MISSING, STATUS_MISSING]

    def test_valores_repetidos_contam_uma_vez(self, dados_sinteticos):
        celulas = run_sweep(dados_sinteticos.records[:60], dados_sinteticos.records[250:], [30, 30], [1, 1], AJUSTES)
        assert celulas["patients"].tolist() == [30, 30]
        assert celulas["model"].tolist() == ["network", "ridge"]
        assert metric_grids(celulas)["r_squared_network"].shape == (1, 1)

    def test_grade_igual_as_celulas_isoladas(self, dados_sinteticos):
        """Cada célula de uma grade 2x2 em dois processos dá o mesmo que run_cell sozinho"""
        treino, teste = dados_sinteticos.records[:60], dados_sinteticos.records[250:]
        celulas = run_sweep(treino, teste, [30, 60], [1, 2], AJUSTES, workers=2)
        elegiveis = filter_eligible(teste)
        isoladas = [linha for n in (30, 60) for anos in (1, 2) for linha in run_cell(treino, elegiveis, n, anos, AJUSTES)]
        assert len(celulas) == len(isoladas) == 8
        for (_, linha), isolada in zip(celulas.iterrows(), isoladas):
            assert (linha["patients"], linha["years"], linha["model"], linha["status"]) == (
                isolada["patients"], isolada["years"], isolada["model"], isolada["status"]
            )
            np.testing.assert_allclose(
                [linha[m] for m in METRIC_COLUMNS], [isolada[m] for m in METRIC_COLUMNS], rtol=1e-8
            )

    def test_treino_vazio(self, dados_sinteticos):
        with pytest.raises(DatasetError, match="conjunto de treino vazio"):
            run_sweep([], dados_sinteticos.records[:10], [10], [1])


def test_metric_grids():
    """Grades pacientes x anos e a diferença rede - ridge, com NaN nas células ausentes"""
    linhas = []
    for n, anos, rede, ridge in ((100, 1, 0.30, 0.20), (100, 3, 0.40, 0.25), (400, 1, 0.50, 0.45), (400, 3, np.nan, np.nan)):
        for modelo, valor in (("network", rede), ("ridge", ridge)):
            linhas.append({"patients": n, "years": anos, "model": modelo, **{m: valor for m in METRIC_COLUMNS}})
    grades = metric_grids(pd.DataFrame(linhas))
    assert len(grades) == 3 * len(METRIC_COLUMNS)
    diferenca = grades["r_squared_difference"]
    assert diferenca.loc[100, 1] == pytest.approx(0.10)
    assert diferenca.loc[100, 3] == pytest.approx(0.15)
    assert np.isnan(diferenca.loc[400, 3])
    assert grades["cpm_network"].loc[400, 1] == 0.50
