"""
Checagens de replicação em dados sintéticos com semente fixa.

As checagens direcionais (marcador ``aceitacao``) treinam modelos completos e
levam minutos; rode com ``pytest -m aceitacao``.
"""
import numpy as np
import pytest

from custos.services.attribution import AttributionConfig, cohort_attribution, integrated_gradients, select_cohort
from custos.services.baselines import LastYearBaseline, MeanPriorBaseline, RidgeModel, RidgeParameters
from custos.services.claims_data import split_dataset
from custos.services.evaluation import ChangeLabel, evaluate_predictions, filter_eligible, label_change
from custos.services.network import (
    INFERENCE,
    NetworkParameters,
    NeuralNetworkModel,
    backward,
    forward,
    input_gradient,
    total_cost_weights,
)
from custos.services.sweep import SweepSettings, run_sweep
from custos.services.synthetic import SyntheticSpec, generate_synthetic
from custos.services.trainer import NetworkArch, TrainConfig, train_network, train_ridge
from custos.services.vocab_encoder import build_vocabulary, encode_many

SEMENTE = 2024
PASSO = 1e-5


def _rede_aleatoria(rng):
    d = int(rng.integers(1, 11))
    H = int(rng.integers(1, 6))
    params = NetworkParameters.initialize(d, H, rng)
    arrays = {k: v + rng.uniform(0.0, 0.5, size=v.shape) if k.startswith("b") else v for k, v in params.as_dict().items()}
    return params.with_arrays(arrays)


def _saida(params, X, pesos):
    return float(np.sum(forward(params, X, INFERENCE)[0] * pesos))


class TestCorrecaoDoGradiente:
    """Gradientes analíticos contra diferença central em redes aleatórias"""

    def test_vinte_redes(self):
        rng = np.random.default_rng(SEMENTE)
        for _ in range(20):
            params = _rede_aleatoria(rng)
            X = rng.uniform(0.0, 1.0, size=(3, params.input_dim))
            pesos = rng.normal(size=(3, 7))
            _, trace = forward(params, X, INFERENCE, keep_trace=True)
            analitico = backward(params, trace, pesos).as_dict()
            for nome, valor in params.as_dict().items():
                numerico = np.zeros_like(valor)
                for indice in np.ndindex(valor.shape):
                    arrays = {k: v.copy() for k, v in params.as_dict().items()}
                    arrays[nome][indice] += PASSO
                    mais = _saida(params.with_arrays(arrays), X, pesos)
                    arrays[nome][indice] -= 2 * PASSO
                    menos = _saida(params.with_arrays(arrays), X, pesos)
                    numerico[indice] = (mais - menos) / (2 * PASSO)
                np.testing.assert_allclose(analitico[nome], numerico, rtol=1e-4, atol=1e-6, err_msg=nome)

            w = rng.normal(size=7)
            numerico = np.zeros(params.input_dim)
            for j in range(params.input_dim):
                passo = np.zeros(params.input_dim)
                passo[j] = PASSO
                numerico[j] = (_saida(params, X[0] + passo, w) - _saida(params, X[0] - passo, w)) / (2 * PASSO)
            np.testing.assert_allclose(input_gradient(params, X[0], w), numerico, rtol=1e-4, atol=1e-6)


class TestCompletudeDoIG:
    def test_modelo_linear_com_um_passo(self):
        """Na ridge a soma das atribuições é F(x) - F(0) já com m = 1"""
        rng = np.random.default_rng(SEMENTE)
        for _ in range(20):
            d = int(rng.integers(1, 30))
            ridge = RidgeModel(params=RidgeParameters(W=rng.normal(size=(d, 7)), b=rng.normal(size=7)))
            x = rng.uniform(0.0, 3.0, size=d)
            w = total_cost_weights()
            diferenca = w @ ridge.predict(x) - w @ ridge.predict(np.zeros(d))
            assert integrated_gradients(ridge, x, AttributionConfig(steps=1)).total == pytest.approx(diferenca, rel=1e-9, abs=1e-9)

    def test_redes_sem_dobras_no_caminho(self):
        """Com todas as ReLUs ativas ao longo do caminho, m = 300 já dá a diferença exata"""
        rng = np.random.default_rng(SEMENTE)
        for _ in range(20):
            params = _rede_aleatoria(rng)
            arrays = {k: np.abs(v) for k, v in params.as_dict().items()}
            modelo = NeuralNetworkModel(params=params.with_arrays(arrays))
            x = rng.uniform(0.0, 1.0, size=params.input_dim)
            w = total_cost_weights()
            diferenca = w @ modelo.predict(x) - w @ modelo.predict(np.zeros(params.input_dim))
            assert integrated_gradients(modelo, x, AttributionConfig(steps=300)).total == pytest.approx(
                diferenca, rel=1e-9
            )

    def test_redes_com_dobras_no_caminho(self):
        """ReLUs que mudam de estado no caminho pedem m = 20000 para ficar a 1% da diferença"""
        rng = np.random.default_rng(SEMENTE)
        for _ in range(20):
            params = _rede_aleatoria(rng)
            modelo = NeuralNetworkModel(params=params)
            x = rng.uniform(0.0, 3.0, size=params.input_dim)
            w = total_cost_weights()
            diferenca = w @ modelo.predict(x) - w @ modelo.predict(np.zeros(params.input_dim))
            assert integrated_gradients(modelo, x, AttributionConfig(steps=20000)).total == pytest.approx(
                diferenca, rel=1e-2, abs=1e-6
            )


def test_exclusao_por_offset():
    """0,01 -> 10 Euro é um aumento de 1000x sem offset, mas fica estável com +10 Euro"""
    assert label_change(0.01, 10.0) == ChangeLabel.STABLE


@pytest.fixture(scope="module")
def experimento():
    """2000 pacientes com interações, rede e ridge treinadas com os padrões"""
    dados = generate_synthetic(SyntheticSpec(n_patients=2000, seed=SEMENTE, interaction_strength=1.0))
    treino, teste = split_dataset(dados.records, 0.7, SEMENTE)
    teste = filter_eligible(teste)
    vocab = build_vocabulary(treino, min_count=10)
    rede, log_rede = train_network(treino, vocab, TrainConfig.for_model("network", seed=SEMENTE), NetworkArch())
    ridge, _ = train_ridge(treino, vocab, TrainConfig.for_model("ridge", seed=SEMENTE))
    X = encode_many(teste, vocab, teste[0].quarters)
    y = np.array([f.target.total for f in teste])
    ultimo = np.array([f.last_year_cost for f in teste])
    relatorios = {
        "rede": evaluate_predictions("Neural network", y, rede.predict_totals(X), last_year_costs=ultimo),
        "ridge": evaluate_predictions("Ridge regression", y, ridge.predict_totals(X), last_year_costs=ultimo),
        "ultimo_ano": evaluate_predictions("Last year", y, LastYearBaseline().predict_totals(None, teste), change_analysis=False),
        "media": evaluate_predictions("Mean prior", y, MeanPriorBaseline().predict_totals(None, teste), last_year_costs=ultimo),
    }
    return {
        "dados": dados, "teste": teste, "vocab": vocab, "rede": rede, "ridge": ridge,
        "log_rede": log_rede, "relatorios": relatorios,
    }


@pytest.mark.aceitacao
class TestReplicacaoDirecional:
    """Ordem qualitativa da tabela de métricas e da detecção de mudanças"""

    def test_perda_cai_no_treino(self, experimento):
        perdas = experimento["log_rede"].losses
        assert len(perdas) == 25
        assert perdas[-1] < perdas[0]

    def test_ordem_da_tabela(self, experimento):
        r = {nome: rel.metrics() for nome, rel in experimento["relatorios"].items()}
        assert r["rede"]["r_squared"] > r["ridge"]["r_squared"]
        assert r["rede"]["cpm"] > r["ridge"]["cpm"]
        assert r["rede"]["mape"] < r["ridge"]["mape"]
        for modelo in ("rede", "ridge"):
            assert r[modelo]["r_squared"] > r["ultimo_ano"]["r_squared"]
            assert r[modelo]["r_squared"] > r["media"]["r_squared"]

    def test_deteccao_de_aumentos(self, experimento):
        relatorios = experimento["relatorios"]
        referencia = relatorios["media"].change_analysis.auroc_increase
        assert relatorios["rede"].change_analysis.auroc_increase > referencia
        assert relatorios["ridge"].change_analysis.auroc_increase > referencia

    def test_interacao_plantada_no_topo(self, experimento):
        """Os dois códigos da interação mais forte ficam no top 10 da rede; a ridge rebaixa ao menos um"""
        coorte = select_cohort(experimento["teste"], "increasers")
        assert coorte
        config = AttributionConfig(steps=300)
        rede = cohort_attribution(experimento["rede"], coorte, experimento["vocab"], config)
        ridge = cohort_attribution(experimento["ridge"], coorte, experimento["vocab"], config)

        def posto(relatorio, code):
            linha = relatorio.codes[relatorio.codes["code"] == code]
            return int(linha["rank"].iloc[0]) if len(linha) else None

        a, b = experimento["dados"].truth.strongest_interaction()
        postos_rede = [posto(rede, c) for c in (a, b)]
        assert all(p is not None and p <= 10 for p in postos_rede)
        postos_ridge = [posto(ridge, c) for c in (a, b)]
        assert any(pr is None or pr > pn for pr, pn in zip(postos_ridge, postos_rede))


@pytest.mark.aceitacao
def test_sweep_monotono_em_pacientes():
    """r² da rede não cai com mais pacientes de treino (faixa de 0,02)"""
    dados = generate_synthetic(SyntheticSpec(n_patients=6000, seed=SEMENTE, interaction_strength=1.0))
    treino, teste = split_dataset(dados.records, 4000 / 6000, SEMENTE)
    celulas = run_sweep(treino, teste, [1000, 4000], [1, 3, 6], SweepSettings(seed=SEMENTE), workers=2)
    rede = celulas[celulas["model"] == "network"].pivot(index="patients", columns="years", values="r_squared")
    assert not rede.isna().any().any()
    for anos in (1, 3, 6):
        assert rede.loc[4000, anos] >= rede.loc[1000, anos] - 0.02
