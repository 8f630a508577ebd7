use proptest::prelude::*;

use qpat::grid::VoxelGrid;
use qpat::phantom::{
    rasterize, sample_phantom, AcousticProperties, MaterialSpectrum, OpticalProperties, PhantomSpec, SamplerRanges,
    Shape, SpectralSample,
};

fn material(name: &str, samples: &[(f64, f64, f64)]) -> MaterialSpectrum {
    let samples = samples
        .iter()
        .map(|&(wl, mu_a, mu_s)| SpectralSample { wavelength_nm: wl, optical: OpticalProperties::new(mu_a, mu_s, 0.7, 1.4).unwrap() })
        .collect();
    MaterialSpectrum::new(name, samples, AcousticProperties::water()).unwrap()
}

fn body(shape: Shape) -> PhantomSpec {
    PhantomSpec {
        id: "p".into(),
        seed: None,
        materials: vec![material("bg", &[(800.0, 0.01, 1.0)])],
        background_shape: shape,
        background_material: "bg".into(),
        inclusions: vec![],
        couplant_material: "water".into(),
    }
}

fn shape() -> impl Strategy<Value = Shape> {
    let center = prop::array::uniform3(-1.0f64..1.0);
    prop_oneof![
        (center.clone(), 3.0f64..8.0).prop_map(|(c, r)| Shape::sphere(c, r).unwrap()),
        (center, 3.0f64..8.0, -0.5f64..0.5, 2.0f64..6.0).prop_map(|(c, r, tilt, h)| {
            let n = (1.0 + tilt * tilt).sqrt();
            Shape::cylinder(c, r, [tilt / n, 0.0, 1.0 / n], h).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn halving_spacing_keeps_volume(s in shape()) {
        let spec = body(s);
        let coarse = VoxelGrid::centered([80, 80, 80], 0.25).unwrap();
        let fine = VoxelGrid::centered([160, 160, 160], 0.125).unwrap();
        let vol = |g: &VoxelGrid| rasterize(&spec, g).unwrap().count(1) as f64 * g.voxel_volume();
        let (a, b) = (vol(&coarse), vol(&fine));
        prop_assert!((a - b).abs() / b < 0.02, "{} vs {}", a, b);
    }
}

proptest! {
    #[test]
    fn interpolation_preserves_order(
        lo in 0.0f64..1.0, dlo in 0.0f64..1.0,
        hi in 0.0f64..1.0, dhi in 0.0f64..1.0,
        t in 0.0f64..=1.0,
    ) {
        // a ≥ b at both bracketing wavelengths
        let a = material("a", &[(700.0, lo + dlo, 1.0), (710.0, hi + dhi, 1.0)]);
        let b = material("b", &[(700.0, lo, 2.0), (710.0, hi, 2.0)]);
        let wl = 700.0 + 10.0 * t;
        prop_assert!(a.at(wl).unwrap().mu_a >= b.at(wl).unwrap().mu_a);
    }

    #[test]
    fn sampler_ignores_thread_count(seed in any::<u64>()) {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_phantom("s", seed, &SamplerRanges::default()).unwrap())
        };
        let a = run(1);
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&run(4)).unwrap());
        prop_assert_eq!(a, sample_phantom("s", seed, &SamplerRanges::default()).unwrap());
    }
}

#[test]
fn schema_lists_every_serialised_key() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/phantom.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let spec = sample_phantom("s", 4, &SamplerRanges { inclusion_count: [2, 2], ..Default::default() }).unwrap();
    let doc = serde_json::to_value(&spec).unwrap();
    let props = |v: &serde_json::Value| -> Vec<String> { v["properties"].as_object().unwrap().keys().cloned().collect() };
    let keys = |v: &serde_json::Value| -> Vec<String> { v.as_object().unwrap().keys().cloned().collect() };
    let covered = |listed: Vec<String>, found: Vec<String>| found.iter().all(|k| listed.contains(k));
    assert!(covered(props(&schema), keys(&doc)));
    for req in schema["required"].as_array().unwrap() {
        assert!(doc.get(req.as_str().unwrap()).is_some());
    }
    let defs = &schema["$defs"];
    let material = &doc["materials"][0];
    assert!(covered(props(&defs["material"]), keys(material)));
    assert!(covered(props(&defs["optical"]), keys(&material["samples"][0]["optical"])));
    assert!(covered(props(&defs["material"]["properties"]["acoustic"]), keys(&material["acoustic"])));
    let shapes = defs["shape"]["oneOf"].as_array().unwrap();
    for shape in [&doc["background_shape"], &doc["inclusions"][0]["shape"]] {
        let kind = shape["kind"].as_str().unwrap();
        let def = shapes.iter().find(|s| s["properties"]["kind"]["const"] == kind).unwrap();
        assert!(covered(props(def), keys(shape)));
    }
}
