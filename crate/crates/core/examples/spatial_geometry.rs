//! Classifies box pairs and scores a spatial prompt against synthetic
//! detections, together with its swapped twin.
//!
//!     cargo run --example spatial_geometry

use compbench::backends::{FakeDetector, ImageRef};
use compbench::geometry::{classify_directional, classify_proximity, iou, BBox, Detection, GeometryConfig, NounClassMap};
use compbench::metrics::unidet_metric;
use compbench::suite::{
    render_template, swap_relation, Category, Novelty, ObjectSpec, PromptRecord, RelationKind, RelationSpec, Source,
    Split,
};

fn main() {
    let cfg = GeometryConfig::default();
    let girl = BBox::new(40.0, 200.0, 140.0, 420.0).unwrap();
    let horse = BBox::new(260.0, 180.0, 480.0, 400.0).unwrap();
    println!("iou {:.3}", iou(&girl, &horse));
    println!("girl relative to horse: {:?}", classify_directional(&girl, &horse, &cfg));
    println!("horse relative to girl: {:?}", classify_directional(&horse, &girl, &cfg));
    println!("close together: {}", classify_proximity(&girl, &horse, &cfg));

    let mut record = PromptRecord {
        id: "spatial_demo".into(),
        category: Category::Spatial,
        split: Split::Test,
        novelty: Novelty::NotApplicable,
        text: String::new(),
        objects: vec![ObjectSpec::bare("girl"), ObjectSpec::bare("horse")],
        relations: vec![RelationSpec { subject_index: 0, object_index: 1, word: "on the left of".into(), kind: RelationKind::Spatial }],
        source: Source::Template,
        structure_missing: false,
    };
    record.text = render_template(&record);
    let twin = swap_relation(&record);

    let image = ImageRef::from_bytes("demo", b"pixels", 512, 512);
    let detector = FakeDetector::new().with(
        "demo",
        vec![Detection::new("girl", 0.93, girl).unwrap(), Detection::new("horse", 0.88, horse).unwrap()],
    );
    let mapping = NounClassMap::identity(["girl", "horse"]);
    for r in [&record, &twin] {
        let s = unidet_metric(&image, r, &detector, &mapping, &cfg).unwrap();
        println!("{:<32} {}", r.text, s.value);
    }
}
