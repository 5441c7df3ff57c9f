import factory

from custos.services.claims_data import (
    COST_CATEGORIES,
    COST_EVENT_NAME,
    ClaimsRecord,
    CodedEvent,
    EventKind,
    NumericEvent,
)


class CodedEventFactory(factory.Factory):
    """Factory para eventos codificados"""

    class Meta:
        model = CodedEvent

    kind = EventKind.ICD10
    code = factory.Sequence(lambda n: f"D{n % 20:04d}")
    quarter = factory.Faker("random_int", min=0, max=23)


class NumericEventFactory(factory.Factory):
    """Factory para eventos numéricos (custo trimestral por padrão)"""

    class Meta:
        model = NumericEvent

    name = COST_EVENT_NAME
    value = factory.Faker("pyfloat", min_value=0, max_value=5000, right_digits=2)
    quarter = factory.Faker("random_int", min=0, max=23)


class ClaimsRecordFactory(factory.Factory):
    """Factory de fichas; passa por ClaimsRecord.build para derivar os custos anteriores"""

    class Meta:
        model = ClaimsRecord

    patient_id = factory.Sequence(lambda n: f"P{n:06d}")
    coded_events = factory.LazyFunction(
        lambda: tuple(CodedEventFactory.build_batch(5))
    )
    numeric_events = factory.LazyFunction(
        lambda: (NumericEvent(COST_EVENT_NAME, 120.0, 2), NumericEvent(COST_EVENT_NAME, 80.0, 22))
    )
    target = factory.LazyFunction(lambda: {nome: 100.0 for nome in COST_CATEGORIES})
    alive_or_insured = True
    quarters = 24

    @classmethod
    def _build(cls, model_class, *args, **kwargs):
        return model_class.build(*args, **kwargs)

    @classmethod
    def _create(cls, model_class, *args, **kwargs):
        return model_class.build(*args, **kwargs)
