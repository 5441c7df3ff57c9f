import numpy as np
import pytest

from custos.services import trainer as modulo_trainer
from custos.services.baselines import RidgeModel, ridge_closed_form
from custos.services.network import INFERENCE, NetworkParameters, NeuralNetworkModel, backward, forward
from custos.services.sementes import gerador
from custos.services.trainer import (
    CategoryWiseModel,
    EnsembleModel,
    LossLog,
    NetworkArch,
    TrainConfig,
    TrainingError,
    design_matrix,
    fit_network,
    fit_ridge,
    targets_matrix,
    train_ensemble,
    train_network,
    train_ridge,
)
from custos.services.synthetic import SyntheticSpec, generate_synthetic
from custos.services.vocab_encoder import build_vocabulary


@pytest.fixture(scope="module")
def problema_linear():
    """n=200, d=10, C=1 com X e y centrados"""
    rng = np.random.default_rng(2024)
    X = rng.normal(size=(200, 10))
    X -= X.mean(axis=0)
    y = X @ rng.normal(size=10) + 0.1 * rng.normal(size=200)
    return X, y - y.mean()


@pytest.fixture
def treino(dados_sinteticos):
    return dados_sinteticos.records[:80]


@pytest.fixture
def vocab(treino):
    return build_vocabulary(treino, min_count=10)


@pytest.fixture
def passos(monkeypatch):
    """Registra (parâmetros, gradientes) de cada passo de ADAM do treino"""
    registro = []
    original = modulo_trainer._passo

    def registrar(params, grads, estado):
        registro.append((params, grads))
        return original(params, grads, estado)

    monkeypatch.setattr(modulo_trainer, "_passo", registrar)
    return registro


LOTES_DE_CINCO = ([0, 1], [2, 3], [4])


class TestTrainConfig:
    """Testes da configuração de treino"""

    def test_padroes_por_modelo(self):
        assert TrainConfig.for_model("ridge").batch_size == 128
        assert TrainConfig.for_model("network").batch_size == 32
        assert TrainConfig.for_model("ridge", batch_size=64).batch_size == 64
        assert TrainConfig().epochs == 25
        assert TrainConfig().lambda_ == 0.1

    @pytest.mark.parametrize("campos", [{"epochs": -1}, {"batch_size": 0}, {"lambda_": -0.1}, {"seed": -3}])
    def test_invalida(self, campos):
        with pytest.raises(TrainingError):
            TrainConfig(**campos)


class TestFitRidge:
    """Testes da ridge ajustada por ADAM"""

    def test_confere_com_forma_fechada(self, problema_linear):
        """A solução estocástica fica a 1e-2 de distância relativa da solução fechada"""
        X, y = problema_linear
        config = TrainConfig(
            epochs=2000, batch_size=100, shuffle=False, lambda_=0.1, learning_rate=1e-2, normalize_targets=False
        )
        modelo, _ = fit_ridge(X, y, config)
        esperado = ridge_closed_form(X, y, 0.1)
        W = modelo.params.W[:, 0]
        assert np.linalg.norm(W - esperado) / np.linalg.norm(esperado) < 1e-2
        assert abs(modelo.params.b[0]) < 1e-2

    def test_lambda_grande_encolhe(self, problema_linear):
        """Com lambda=1e6 a norma de W fica abaixo de 1e-3 da norma sem penalidade"""
        X, y = problema_linear
        y = 1000.0 * y
        referencia = np.linalg.norm(ridge_closed_form(X, y, 0.0))
        modelo, _ = fit_ridge(X, y, TrainConfig(epochs=25, batch_size=128, lambda_=1e6, normalize_targets=False))
        assert np.linalg.norm(modelo.params.W) < 1e-3 * referencia

    def test_zero_epocas(self, problema_linear):
        X, y = problema_linear
        modelo, log = fit_ridge(X, y, TrainConfig(epochs=0))
        assert not np.any(modelo.params.W)
        assert log.epochs == []

    def test_deterministico(self, problema_linear):
        X, y = problema_linear
        config = TrainConfig(epochs=3, batch_size=32, seed=9)
        a, log_a = fit_ridge(X, y, config)
        b, log_b = fit_ridge(X, y, config)
        np.testing.assert_array_equal(a.params.W, b.params.W)
        assert log_a.losses == log_b.losses

    def test_perda_em_euro(self, problema_linear):
        """Com alvos normalizados a perda registrada continua na escala original"""
        X, y = problema_linear
        _, log = fit_ridge(X, 1000.0 * y, TrainConfig(epochs=1, batch_size=200, shuffle=False))
        assert log.losses[0] == pytest.approx(np.mean((1000.0 * y) ** 2))

    def test_lote_curto_usa_media_do_proprio_lote(self, rng, passos):
        """n=5 e B=2: o último passo tem uma ficha só e o gradiente é a média sobre ela"""
        X = rng.uniform(size=(5, 3))
        Y = rng.uniform(size=(5, 7))
        config = TrainConfig(epochs=1, batch_size=2, shuffle=False, lambda_=0.1, normalize_targets=False)
        fit_ridge(X, Y, config)
        assert len(passos) == 3
        for (params, grads), linhas in zip(passos, LOTES_DE_CINCO):
            media = 2.0 * (X[linhas] @ params.W + params.b - Y[linhas]) / len(linhas)
            np.testing.assert_allclose(grads["W"], X[linhas].T @ media + 0.2 * params.W, rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(grads["b"], media.sum(axis=0), rtol=1e-10, atol=1e-12)

    def test_alvos_desalinhados(self, problema_linear):
        X, y = problema_linear
        with pytest.raises(TrainingError):
            fit_ridge(X, y[:10], TrainConfig(epochs=1))


class TestFitNetwork:
    """Testes do treino da rede"""

    def test_zero_epocas_devolve_inicializacao(self, rng):
        X = rng.uniform(size=(20, 6))
        Y = rng.uniform(size=(20, 7))
        modelo, log = fit_network(X, Y, TrainConfig(epochs=0, normalize_targets=False), NetworkArch(hidden=3))
        inicial = NetworkParameters.initialize(6, 3, gerador(0, "init"))
        np.testing.assert_array_equal(modelo.params.W1, inicial.W1)
        assert len(log.epochs) == 0

    def test_deterministico(self, rng):
        X = rng.uniform(size=(40, 6))
        Y = rng.uniform(size=(40, 7))
        config = TrainConfig(epochs=2, batch_size=8, seed=5)
        a, _ = fit_network(X, Y, config, NetworkArch(hidden=4))
        b, _ = fit_network(X, Y, config, NetworkArch(hidden=4))
        for nome in NetworkParameters.NAMES:
            np.testing.assert_array_equal(a.params.as_dict()[nome], b.params.as_dict()[nome])

    def test_perda_cai(self, treino, vocab):
        X = design_matrix(treino, vocab)
        Y = targets_matrix(treino)
        _, log = fit_network(X, Y, TrainConfig(epochs=8, learning_rate=1e-2), NetworkArch(hidden=8, dropout=0.0))
        assert log.losses[-1] < log.losses[0]
        assert list(log.to_frame().columns) == ["epoch", "mean_train_loss", "wall_seconds"]

    def test_lote_curto_usa_media_do_proprio_lote(self, rng, passos):
        X = rng.uniform(size=(5, 6))
        Y = rng.uniform(size=(5, 7))
        config = TrainConfig(epochs=1, batch_size=2, shuffle=False, normalize_targets=False)
        fit_network(X, Y, config, NetworkArch(hidden=3, dropout=0.0))
        assert len(passos) == 3
        for (params, grads), linhas in zip(passos, LOTES_DE_CINCO):
            y_hat, trace = forward(params, X[linhas], INFERENCE, keep_trace=True)
            esperado = backward(params, trace, 2.0 * (y_hat - Y[linhas]) / len(linhas)).as_dict()
            for nome in NetworkParameters.NAMES:
                np.testing.assert_allclose(grads.as_dict()[nome], esperado[nome], rtol=1e-10, atol=1e-12)

    def test_forma_dos_alvos(self, rng):
        with pytest.raises(TrainingError):
            fit_network(rng.uniform(size=(5, 6)), rng.uniform(size=(5, 3)), TrainConfig(epochs=1))

    def test_escala_de_saida(self, rng):
        """A escala de saída é o RMS dos alvos"""
        Y = np.full((10, 7), 300.0)
        modelo, _ = fit_network(rng.uniform(size=(10, 6)), Y, TrainConfig(epochs=0), NetworkArch(hidden=3))
        assert modelo.params.output_scale == pytest.approx(300.0)


class TestTreinoPorFichas:
    """Testes das funções que partem das fichas"""

    def test_train_ridge(self, treino, vocab):
        modelo, log = train_ridge(treino, vocab, TrainConfig.for_model("ridge", epochs=2))
        assert isinstance(modelo, RidgeModel)
        assert modelo.input_dim == vocab.dimension(24)
        assert len(log.epochs) == 2

    def test_train_network_por_categoria(self, treino, vocab):
        """joint=False treina sete redes, uma por categoria"""
        modelo, log = train_network(treino, vocab, TrainConfig(epochs=1, joint=False), NetworkArch(hidden=4))
        assert isinstance(modelo, CategoryWiseModel)
        assert len(modelo.members) == 7
        assert modelo.predict(design_matrix(treino[:3], vocab)).shape == (3, 7)
        assert len(log.epochs) == 1

    def test_ensemble_media_dos_membros(self, treino, vocab):
        ensemble, logs = train_ensemble(treino, vocab, TrainConfig(epochs=1), k=2, arch=NetworkArch(hidden=4))
        assert isinstance(ensemble, EnsembleModel)
        assert len(logs) == 2
        assert all(isinstance(m, NeuralNetworkModel) for m in ensemble.members)
        X = design_matrix(treino[:5], vocab)
        media = (ensemble.members[0].predict(X) + ensemble.members[1].predict(X)) / 2
        np.testing.assert_allclose(ensemble.predict(X), media)
        assert not np.array_equal(ensemble.members[0].params.W1, ensemble.members[1].params.W1)

    def test_ensemble_de_um_membro(self, treino, vocab):
        """k=1 prevê exatamente o mesmo que a rede treinada sozinha com a mesma semente"""
        config = TrainConfig(epochs=1, seed=4)
        arch = NetworkArch(hidden=4)
        ensemble, _ = train_ensemble(treino, vocab, config, k=1, arch=arch)
        sozinha, _ = train_network(treino, vocab, config, arch)
        X = design_matrix(treino[:5], vocab)
        np.testing.assert_array_equal(ensemble.predict(X), sozinha.predict(X))

    def test_dados_lineares_sem_ruido(self):
        """Sem ruído nem interações, RMSE de treino abaixo de 5% do desvio-padrão em 25 épocas"""
        dados = generate_synthetic(SyntheticSpec(
            n_patients=1000, quarters=4, seed=11, interaction_strength=0.0, noise_scale=0.0, age_effect=0.0,
            n_interactions=0, vocab_sizes={"ICD10": 8, "ATC": 6, "DRG": 3, "OPS": 4, "FG": 3, "GOP": 6},
        ))
        assert dados.truth.linear
        vocab = build_vocabulary(dados.records, min_count=0, numeric_names=())
        config = TrainConfig(epochs=25, learning_rate=1e-2, seed=11)
        modelo, _ = train_network(dados.records, vocab, config, NetworkArch(hidden=8, dropout=0.0))
        y = np.array([f.target.total for f in dados.records])
        previsto = modelo.predict_totals(design_matrix(dados.records, vocab))
        assert np.sqrt(np.mean((previsto - y) ** 2)) < 0.05 * y.std()

    def test_ensemble_de_ridge(self, treino, vocab):
        ensemble, _ = train_ensemble(treino, vocab, TrainConfig.for_model("ridge", epochs=1), k=2, kind="ridge")
        assert ensemble.member_kind == "ridge"

    @pytest.mark.parametrize("k", [0, True, 1.5])
    def test_k_invalido(self, treino, vocab, k):
        with pytest.raises(TrainingError):
            train_ensemble(treino, vocab, TrainConfig(epochs=1), k=k)

    def test_ensemble_por_categoria_rejeitado(self, treino, vocab):
        with pytest.raises(TrainingError, match="por categoria"):
            train_ensemble(treino, vocab, TrainConfig(epochs=1, joint=False), k=2)

    def test_fichas_sem_alvo(self, treino):
        sem_alvo = [f.__class__.build(f.patient_id, f.coded_events, f.numeric_events) for f in treino[:2]]
        with pytest.raises(TrainingError, match="sem alvo"):
            targets_matrix(sem_alvo)


class TestLossLog:
    def test_merged_e_averaged(self):
        a, b = LossLog(), LossLog()
        a.add(1, 10.0, 1.0)
        b.add(1, 30.0, 2.0)
        assert LossLog.merged([a, b]).epochs == [(1, 40.0, 3.0)]
        assert LossLog.averaged([a, b]).epochs == [(1, 20.0, 3.0)]
