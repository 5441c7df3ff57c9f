from pathlib import Path

from django.conf import settings

from custos.management.base import CustosCommand, Opcao
from custos.services.claims_data import split_dataset, write_dataset
from custos.services.synthetic import SyntheticSpec, generate_synthetic, write_ground_truth


class Command(CustosCommand):
    help = "Gera um conjunto sintético de sinistros com efeitos conhecidos e a partição treino/teste"
    subcomando = "generate"
    opcoes = (
        Opcao("patients", int, 2000, "Número de pacientes"),
        Opcao("seed", int, 0, "Semente da execução"),
        Opcao("quarters", int, lambda: settings.CUSTOS_QUARTERS, "Trimestres observados (T)"),
        Opcao("interaction_strength", float, 1.0, "Escala dos efeitos de pares de códigos (0 = verdade linear)"),
        Opcao("noise_scale", float, 0.3, "Desvio do ruído log-normal do alvo"),
        Opcao("n_interactions", int, 5, "Pares de códigos com interação plantada"),
        Opcao("events_per_quarter", float, 3.0, "Média de eventos por trimestre"),
        Opcao("recency_weight", float, 3.0, "Peso do trimestre mais recente relativo ao mais antigo"),
        Opcao("train_fraction", float, 0.7, "Fração de treino"),
        Opcao("split_mode", str, "positional", "Modo da partição", escolhas=("positional", "shuffled")),
    )

    def validar(self, config):
        SyntheticSpec(**self._spec_kwargs(config)).validate()

    def _spec_kwargs(self, config) -> dict:
        return {
            "n_patients": config["patients"],
            "seed": config["seed"],
            "quarters": config["quarters"],
            "interaction_strength": config["interaction_strength"],
            "noise_scale": config["noise_scale"],
            "n_interactions": config["n_interactions"],
            "events_per_quarter": config["events_per_quarter"],
            "recency_weight": config["recency_weight"],
        }

    def executar(self, config, saida: Path):
        dados = generate_synthetic(SyntheticSpec(**self._spec_kwargs(config)))
        treino, teste = split_dataset(dados.records, config["train_fraction"], config["seed"], config["split_mode"])
        artefatos = {
            "dataset": write_dataset(dados.records, saida / "dataset.jsonl"),
            "train": write_dataset(treino, saida / "train.jsonl"),
            "test": write_dataset(teste, saida / "test.jsonl"),
        }
        artefatos.update(write_ground_truth(dados.truth, saida))
        return artefatos
