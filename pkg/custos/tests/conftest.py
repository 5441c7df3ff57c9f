import numpy as np
import pytest
from pytest_factoryboy import register

from custos.services.network import NetworkParameters
from custos.services.synthetic import SyntheticSpec, generate_synthetic
from custos.tests.factories import ClaimsRecordFactory, CodedEventFactory, NumericEventFactory

register(CodedEventFactory)
register(NumericEventFactory)
register(ClaimsRecordFactory)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dados_sinteticos():
    """Conjunto sintético pequeno (300 pacientes) compartilhado pelos testes"""
    return generate_synthetic(SyntheticSpec(n_patients=300, seed=3))


@pytest.fixture
def rede_pequena(rng):
    """Rede d=6, H=3 com vieses positivos para manter as ReLUs ativas"""
    params = NetworkParameters.initialize(6, 3, rng)
    arrays = params.as_dict()
    for nome in ("b1", "b2", "b3", "b4", "b5"):
        arrays[nome] = np.full(arrays[nome].shape, 0.5)
    return params.with_arrays(arrays)


@pytest.fixture
def artefatos(settings, tmp_path):
    """Direciona os artefatos padrão dos comandos para um diretório temporário"""
    settings.CUSTOS_ARTIFACTS_DIR = tmp_path / "artefatos"
    return settings.CUSTOS_ARTIFACTS_DIR
