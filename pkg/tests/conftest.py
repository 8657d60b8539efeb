"""Shared fixtures: a miniature on-disk workspace with six stub datasets
(120 placeholder images), matching schemas, manifests, knowledge files, and a
mock backend config. Images are tiny text files; nothing ever decodes them.
"""

from __future__ import annotations

import json
from pathlib import Path
from types import SimpleNamespace

import pytest

from agroforge.gateway import BackendConfig, Gateway
from agroforge.ingest import DatasetCatalog, ImageRecord

# dataset_id -> (domain, {class folder -> image count})
DATASETS = {
    "pv_mini": (
        "disease",
        {
            "Tomato___Early_blight": 8,
            "Tomato___healthy": 6,
            "Potato___Late_blight": 6,
            "Corn___healthy": 10,
        },
    ),
    "cotton_mini": ("disease", {"diseased_cotton_leaf": 8, "fresh_cotton_leaf": 6}),
    "plantdoc_mini": ("disease", {"Apple Scab Leaf": 7, "Corn leaf blight": 7}),
    "fruits_mini": ("fruit", {"Apple": 7, "Banana": 7, "Mango": 6}),
    "weeds_mini": ("weed", {"Velvetleaf": 8, "Crabgrass": 6}),
    "insects_mini": ("insect", {"Colorado_Potato_Beetle": 10, "Fall_Armyworm": 10, "Aphids": 8}),
}

SCHEMAS = {
    "pv_mini": {
        "domain": "disease",
        "rules": [
            {
                "pattern": r"(?P<plant>[A-Za-z_]+?)___healthy",
                "attributes": {"plant_name": "{plant}", "health_status": "healthy"},
            },
            {
                "pattern": r"(?P<plant>[A-Za-z_]+?)___(?P<disease>.+)",
                "attributes": {
                    "plant_name": "{plant}",
                    "disease_name": "{disease}",
                    "health_status": "diseased",
                },
            },
        ],
    },
    "cotton_mini": {
        "domain": "disease",
        "rules": [],
        "overrides": {
            "diseased_cotton_leaf": {"plant_name": "cotton", "health_status": "diseased"},
            "fresh_cotton_leaf": {"plant_name": "cotton", "health_status": "healthy"},
        },
    },
    "plantdoc_mini": {
        "domain": "disease",
        "rules": [],
        "overrides": {
            "Apple Scab Leaf": {
                "plant_name": "apple",
                "disease_name": "apple scab",
                "health_status": "diseased",
            },
            "Corn leaf blight": {
                "plant_name": "corn",
                "disease_name": "corn leaf blight",
                "health_status": "diseased",
            },
        },
    },
    "fruits_mini": {
        "domain": "fruit",
        "rules": [{"pattern": r"(?P<fruit>[A-Za-z ]+)", "attributes": {"fruit_name": "{fruit}"}}],
    },
    "weeds_mini": {
        "domain": "weed",
        "rules": [{"pattern": r"(?P<weed>[A-Za-z_ ]+)", "attributes": {"weed_name": "{weed}"}}],
    },
    "insects_mini": {
        "domain": "insect",
        "rules": [{"pattern": r"(?P<insect>[A-Za-z_ ]+)", "attributes": {"insect_name": "{insect}"}}],
    },
}

# one knowledge body per (domain, normalized class label)
KNOWLEDGE = {
    "disease": {
        "tomato early blight": "Early blight is a fungal disease of tomato caused by Alternaria species. It first appears as dark spots with concentric rings on older leaves. Severe infections defoliate plants from the bottom up and expose fruit to sunscald. Control it with crop rotation, resistant varieties, and protectant fungicides applied at first symptoms.",
        "tomato healthy": "A healthy tomato plant has uniformly green leaves and steady new growth. Scouting healthy plants weekly helps catch early disease or pest pressure. Balanced watering at the base of the plant keeps foliage dry and reduces infection risk.",
        "potato late blight": "Late blight of potato is caused by Phytophthora infestans, the pathogen behind historic crop failures. It spreads fastest in cool wet weather, producing water-soaked lesions that turn brown and a white mold ring on leaf undersides. Destroy cull piles, plant certified seed, and apply fungicide before symptoms spread.",
        "corn healthy": "Healthy corn shows upright leaves with even color and no lesions. Uniform emergence and good stand counts are the first sign of a strong crop. Adequate nitrogen and timely scouting keep the crop on track through silking.",
        "diseased cotton leaf": "Diseased cotton leaves often show angular, water-soaked lesions bounded by veins, typical of bacterial blight. The bacteria spread by splashing rain and contaminated equipment. Resistant varieties, acid-delinted certified seed, and working fields only when foliage is dry limit spread.",
        "fresh cotton leaf": "A fresh cotton leaf is broad, lobed, and uniformly green. Healthy cotton foliage supports boll development through the season. Regular scouting of healthy fields establishes a baseline for spotting trouble early.",
        "apple scab leaf": "Apple scab, caused by Venturia inaequalis, produces olive-green to sooty spots on leaves and corky lesions on fruit. Infected leaves drop early and weaken the tree. Rake and destroy fallen leaves, prune for airflow, and use scab-resistant cultivars where possible.",
        "corn leaf blight": "Corn leaf blight produces long gray-green to tan cigar-shaped lesions on leaves. It overwinters in corn residue and spreads upward from the lowest leaves in humid weather. Rotation away from corn, residue management, and resistant hybrids are the main defenses.",
    },
    "fruit": {
        "apple": "Apples are pome fruits grown in temperate climates. Most cultivars need cross-pollination from a different variety to set fruit well. Harvest when the ground color shifts and seeds turn brown; cool storage extends shelf life for months.",
        "banana": "Bananas grow on large herbaceous plants and are harvested green for ripening off the plant. The fruit develops in hands along a single stem. Commercial bananas are propagated from suckers, so whole plantings are genetically uniform.",
        "mango": "Mango is a tropical stone fruit that needs a frost-free climate and a distinct dry period before flowering. Maturity is judged by shoulder fullness and flesh color near the seed rather than skin color alone. Handle gently after harvest because the skin bruises easily.",
    },
    "weed": {
        "velvetleaf": "Velvetleaf is a tall annual broadleaf weed with heart-shaped, velvety leaves. It competes strongly for light and nitrogen in row crops. A single plant can set thousands of seeds that remain viable in soil for decades, so control before seed set is critical.",
        "crabgrass": "Crabgrass is a summer annual grass that germinates when soils warm in late spring. It tillers aggressively and smothers slow-starting crops. A dense crop canopy, timed pre-emergence herbicide, and shallow cultivation keep it in check.",
    },
    "insect": {
        "colorado potato beetle": "The Colorado potato beetle is identifiable by ten black stripes on its yellow-orange wing covers. Both adults and larvae feed on potato leaves, with larvae doing the most damage. Rotate fields, use row covers on young plants, encourage lady beetles, and reserve insecticides for heavy pressure.",
        "fall armyworm": "The fall armyworm is a migratory caterpillar that feeds on corn and many grasses. Look for ragged feeding, window-paned leaves, and the inverted Y marking on the head capsule. Early detection matters because large larvae burrow where sprays cannot reach.",
        "aphids": "Aphids are small soft-bodied insects that cluster on new growth and suck plant sap. They excrete honeydew that grows sooty mold and can transmit plant viruses. Lady beetles and lacewings usually keep light infestations below damaging levels.",
    },
}


def build_workspace(root: Path) -> SimpleNamespace:
    datasets_dir = root / "datasets"
    schemas_dir = root / "schemas"
    manifests_dir = root / "manifests"
    knowledge_dir = root / "knowledge"
    for directory in (datasets_dir, schemas_dir, manifests_dir, knowledge_dir):
        directory.mkdir(parents=True, exist_ok=True)

    manifests = []
    for dataset_id, (domain, classes) in DATASETS.items():
        for class_name, count in classes.items():
            class_dir = datasets_dir / dataset_id / class_name
            class_dir.mkdir(parents=True, exist_ok=True)
            for index in range(count):
                name = f"img_{index:03d}.jpg"
                (class_dir / name).write_bytes(f"{dataset_id}/{class_name}/{name}".encode())
        schema_path = schemas_dir / f"{dataset_id}.json"
        schema_path.write_text(json.dumps(SCHEMAS[dataset_id], indent=2), encoding="utf-8")
        manifest_path = manifests_dir / f"{dataset_id}.json"
        manifest_path.write_text(
            json.dumps(
                {
                    "dataset_id": dataset_id,
                    "domain": domain,
                    "root": f"../datasets/{dataset_id}",
                    "schema_path": f"../schemas/{dataset_id}.json",
                    "citation": f"{dataset_id} fixture",
                },
                indent=2,
            ),
            encoding="utf-8",
        )
        manifests.append(manifest_path)

    for domain, entries in KNOWLEDGE.items():
        domain_dir = knowledge_dir / domain
        domain_dir.mkdir(parents=True, exist_ok=True)
        for class_name, body in entries.items():
            slug = class_name.replace(" ", "_")
            (domain_dir / f"{slug}.txt").write_text(
                f"class: {class_name}\nsources: https://example.org/{slug}\n\n{body}\n",
                encoding="utf-8",
            )

    backends_path = root / "backends.json"
    backends_path.write_text(
        json.dumps(
            {
                "backends": [
                    {
                        "backend_id": "mock",
                        "kind": "mock",
                        "model_name": "mock-vlm",
                        "vision_capable": True,
                        "max_in_flight": 4,
                    }
                ]
            },
            indent=2,
        ),
        encoding="utf-8",
    )

    return SimpleNamespace(
        root=root,
        datasets_dir=datasets_dir,
        manifests=manifests,
        knowledge_dir=knowledge_dir,
        backends_path=backends_path,
    )


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    return build_workspace(tmp_path_factory.mktemp("workspace"))


def mock_backend_config(**overrides) -> BackendConfig:
    values = dict(backend_id="mock", kind="mock", model_name="mock-vlm", vision_capable=True, max_in_flight=4)
    values.update(overrides)
    return BackendConfig(**values)


def mock_gateway(cache_dir=None, responder=None, **overrides) -> Gateway:
    config = mock_backend_config(**overrides)
    responders = {config.backend_id: responder} if responder else None
    return Gateway({config.backend_id: config}, cache_dir=cache_dir, responders=responders)


def make_record(record_id="ds/cls/img.jpg", class_label="cls", **attributes) -> ImageRecord:
    if not attributes:
        attributes = {"plant_name": "tomato", "disease_name": "early blight", "health_status": "diseased"}
    return ImageRecord(
        id=record_id,
        relative_path="/".join(record_id.split("/")[1:]),
        class_label=class_label,
        attributes=attributes,
    )


def make_catalog(dataset_id="ds", domain="disease", records=(), classes=None) -> DatasetCatalog:
    records = list(records)
    if classes is None:
        classes = sorted({record.class_label for record in records})
    return DatasetCatalog(dataset_id=dataset_id, domain=domain, classes=classes, records=records)
