import pytest

from polyjur.bundled_frameworks import BUNDLES, bundle_directory, bundle_model, bundle_name, effective_rules, load_bundle
from polyjur.errors import InputError
from polyjur.metamodel import Conditional, Propagation, RelationKind, Simple
from polyjur.vocab import BASE, EMA, GDPR, HIPAA, ITDPA

SAFE_HARBOR_SOURCES = {
    "Name", "Address", "MomentData", "Phone", "Fax", "Email", "SSN", "MedicalRecordNumber",
    "HealthPlanNumber", "AccountNumber", "CertificateNumber", "VehicleIdentifier", "DeviceIdentifier",
    "WebURL", "IPAddress", "BiometricData", "FaceImage", "UniqueID",
}


def test_every_bundle_loads_from_its_directory():
    for short, key in BUNDLES.items():
        assert bundle_directory(short).joinpath("framework.toml").is_file()
        assert bundle_name(key) == key
        fw = load_bundle(short)
        assert fw.id.endswith(f"#{short}Framework")


def test_unknown_bundle_lists_the_choices():
    with pytest.raises(InputError, match="HIPAASafeHarbor"):
        bundle_name("CCPA")


def test_framework_order_respects_extends():
    order = bundle_model().order
    assert order[:3] == ["urn:polyjur:core#MetamodelFramework", BASE.BaseFramework, GDPR.GDPRFramework]
    assert set(order[3:]) == {EMA.EMAFramework, HIPAA.HIPAAFramework, HIPAA.HIPAASafeHarborFramework,
                              HIPAA.HIPAAExpertDeterminationFramework, ITDPA.ItalianDPAFramework}
    assert order.index(HIPAA.HIPAAFramework) < order.index(HIPAA.HIPAASafeHarborFramework)
    assert bundle_model("GDPR").order == order[:3]


def test_safe_harbor_lists_eighteen_identifier_kinds():
    rules = [r for r in load_bundle("HIPAASafeHarbor").declared_rules if r.head == HIPAA.SafeHarborIdentifier]
    assert all(isinstance(r.variant, Simple) for r in rules)
    assert {r.variant.from_label.removeprefix(BASE) for r in rules} == SAFE_HARBOR_SOURCES


def test_release_blockers():
    model = bundle_model()
    assert model.release_blockers(GDPR.GDPRFramework) == {GDPR.PersonalData}
    assert model.release_blockers(EMA.EMAFramework) == {GDPR.PersonalData, EMA.HighReidentificationRisk}
    assert model.release_blockers(HIPAA.HIPAASafeHarborFramework) == {HIPAA.ProtectedHealthInformation}
    assert model.release_blockers(BASE.BaseFramework) == set()


def test_gdpr_health_data_chain():
    heads = {(r.head, r.variant) for r in effective_rules("GDPR")}
    assert (GDPR.SpecialCategoryData, Simple(GDPR.DataConcerningHealth)) in heads
    assert (GDPR.PersonalData, Simple(GDPR.SpecialCategoryData)) in heads
    assert (GDPR.PersonalData, Propagation(RelationKind.CHILD, GDPR.PersonalData)) in heads


def test_italian_rules_replace_the_inherited_personal_data_rules():
    pd = [r for r in effective_rules("ItalianDPA") if r.head == GDPR.PersonalData]
    assert {r.declared_by for r in pd} == {ITDPA.ItalianDPAFramework}
    assert sorted(r.variant.from_label.removeprefix(BASE) for r in pd) == ["Individual", "UniqueCardinality"]
    assert all(isinstance(r.variant, Conditional) for r in pd)
    # rules for other heads still come from the parent
    assert any(r.declared_by == GDPR.GDPRFramework for r in effective_rules("ItalianDPA"))


def test_ema_keeps_gdpr_propagation():
    eff = effective_rules("EMA")
    assert any(r.variant == Propagation(RelationKind.CHILD, GDPR.PersonalData) and r.declared_by == GDPR.GDPRFramework
               for r in eff)
