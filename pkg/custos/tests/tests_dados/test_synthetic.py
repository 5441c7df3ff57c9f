import json

import numpy as np
import pandas as pd
import pytest

from custos.services.claims_data import COST_EVENT_NAME, EventKind
from custos.services.synthetic import (
    AGE_EVENT_NAME,
    SyntheticSpec,
    SyntheticSpecError,
    generate_synthetic,
    write_ground_truth,
)


class TestGenerateSynthetic:
    """Testes do gerador sintético"""

    def test_deterministico(self):
        """Mesmos parâmetros geram exatamente as mesmas fichas"""
        spec = SyntheticSpec(n_patients=40, seed=11)
        assert generate_synthetic(spec).records == generate_synthetic(spec).records

    def test_sementes_diferentes(self):
        a = generate_synthetic(SyntheticSpec(n_patients=40, seed=1)).records
        b = generate_synthetic(SyntheticSpec(n_patients=40, seed=2)).records
        assert a != b

    def test_ids_e_quantidade(self, dados_sinteticos):
        fichas = dados_sinteticos.records
        assert len(fichas) == 300
        assert fichas[0].patient_id == "P000000"
        assert fichas[-1].patient_id == "P000299"

    def test_sexo_em_todo_trimestre(self, dados_sinteticos):
        """Toda ficha carrega o evento SEX em cada trimestre"""
        for ficha in dados_sinteticos.records[:20]:
            trimestres = sorted(e.quarter for e in ficha.coded_events if e.kind == EventKind.SEX)
            assert trimestres == list(range(ficha.quarters))

    def test_numericos_por_trimestre(self, dados_sinteticos):
        """Idade e custo trimestral existem em todos os trimestres; custos não negativos"""
        ficha = dados_sinteticos.records[0]
        for nome in (AGE_EVENT_NAME, COST_EVENT_NAME):
            eventos = [e for e in ficha.numeric_events if e.name == nome]
            assert sorted(e.quarter for e in eventos) == list(range(24))
        assert all(e.value >= 0 for e in ficha.numeric_events if e.name == COST_EVENT_NAME)
        assert ficha.costs_available

    def test_ancora_linear_sem_ruido(self):
        """Sem interação e sem ruído o alvo é exatamente o custo da tabela de efeitos"""
        dados = generate_synthetic(SyntheticSpec(n_patients=50, seed=5, interaction_strength=0.0, noise_scale=0.0))
        assert dados.truth.linear
        for ficha in dados.records:
            np.testing.assert_allclose(ficha.target.as_array(), dados.truth.evaluate(ficha), rtol=1e-12)

    def test_interacao_mais_forte(self, dados_sinteticos):
        truth = dados_sinteticos.truth
        a, b = truth.strongest_interaction()
        maior = max(m for _, _, m in truth.interactions)
        assert (a, b, maior) in truth.interactions

    def test_inelegiveis(self):
        dados = generate_synthetic(SyntheticSpec(n_patients=30, seed=0, ineligible_fraction=1.0))
        assert not any(f.alive_or_insured for f in dados.records)

    @pytest.mark.parametrize(
        "campos",
        [
            {"n_patients": 0},
            {"quarters": 3},
            {"noise_scale": -0.1},
            {"interaction_strength": -1.0},
            {"quiet_fraction": 1.5},
            {"vocab_sizes": {}},
            {"vocab_sizes": {EventKind.ICD10: 2, EventKind.ATC: 2}, "n_interactions": 5},
        ],
    )
    def test_parametros_invalidos(self, campos):
        with pytest.raises(SyntheticSpecError):
            generate_synthetic(SyntheticSpec(**campos))


class TestWriteGroundTruth:
    """Testes da gravação da tabela de efeitos"""

    def test_grava_arquivos(self, tmp_path, dados_sinteticos):
        caminhos = write_ground_truth(dados_sinteticos.truth, tmp_path / "verdade")
        efeitos = pd.read_csv(caminhos["effects"])
        interacoes = pd.read_csv(caminhos["interactions"])
        resumo = json.loads(caminhos["ground_truth"].read_text(encoding="utf-8"))

        assert list(efeitos.columns) == ["kind", "code", "additive_effect"]
        assert "NUMERIC" in set(efeitos["kind"])
        assert len(interacoes) == len(dados_sinteticos.truth.interactions)
        assert resumo["quarters"] == 24
        assert resumo["linear"] is False
