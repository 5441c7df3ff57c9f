import pytest
from django.core.management import call_command


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Dados gerados e uma rede treinada por poucas épocas, compartilhados pelo módulo"""
    raiz = tmp_path_factory.mktemp("pipeline")
    call_command("generate", patients=200, seed=1, quarters=8, output=str(raiz / "dados"))
    call_command(
        "train",
        data=str(raiz / "dados" / "train.jsonl"),
        epochs=2,
        hidden=8,
        quarters=8,
        min_count=5,
        output=str(raiz / "rede"),
    )
    return raiz
