use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevunc::bevraster::{cell_center, decode_grid, density_value, encode_grid, rasterize_with, RangeSpec};
use bevunc::pcio::{crop_range, decode_cloud, encode_cloud, parse_labels, Point, PointCloud};
use bevunc::{Error, Exec};

fn small() -> RangeSpec {
    RangeSpec {
        x_min: 0.0,
        x_max: 6.0,
        y_min: -3.0,
        y_max: 3.0,
        xy_resolution: 0.5,
        ..RangeSpec::standard()
    }
}

fn cloud(rng: &mut ChaCha8Rng, spec: &RangeSpec, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            Point::new(
                rng.gen_range(spec.x_min..spec.x_max) as f32,
                rng.gen_range(spec.y_min..spec.y_max) as f32,
                rng.gen_range(spec.z_min..spec.z_max) as f32,
                rng.gen_range(0.0..1.0),
            )
        })
        .collect();
    PointCloud::new(pts, "t")
}

#[test]
fn density_examples() {
    assert_eq!(density_value(15), 1.0);
    assert_eq!(density_value(0), 0.0);
    assert!((density_value(3) - 0.5).abs() < 1e-15);
    for n in 15..100 {
        assert_eq!(density_value(n), 1.0);
    }
    for n in 0..100 {
        assert!(density_value(n + 1) >= density_value(n));
    }
}

#[test]
fn standard_grid_shape_and_cell_centers() {
    let spec = RangeSpec::standard();
    assert_eq!((spec.rows(), spec.cols(), spec.channels()), (700, 800, 6));
    let (x, y) = cell_center(&spec, 0, 0).unwrap();
    assert!((x - 0.05).abs() < 1e-12 && (y + 39.95).abs() < 1e-12);
    let (x, y) = cell_center(&spec, 699, 799).unwrap();
    assert!((x - 69.95).abs() < 1e-9 && (y - 39.95).abs() < 1e-9);
    assert!(matches!(cell_center(&spec, 700, 0), Err(Error::Index { .. })));
    assert_eq!(spec.cell_of(x, y), Some((699, 799)));
}

#[test]
fn matches_per_point_accumulation() {
    let spec = small();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let pc = cloud(&mut rng, &spec, 500);
        let g = rasterize_with(&pc, &spec, Exec::Sequential).unwrap();
        let (rows, cols) = (spec.rows(), spec.cols());
        for r in 0..rows {
            for c in 0..cols {
                let inside: Vec<&Point> = pc
                    .points
                    .iter()
                    .filter(|p| {
                        ((p.x as f64 - spec.x_min) / spec.xy_resolution).floor() as usize == r
                            && ((p.y as f64 - spec.y_min) / spec.xy_resolution).floor() as usize == c
                    })
                    .collect();
                assert_eq!(g.density(r, c), density_value(inside.len()));
                for s in 0..spec.num_slices {
                    let want = inside
                        .iter()
                        .filter(|p| ((p.z as f64 - spec.z_min) / spec.slice_height).floor() as usize == s)
                        .map(|p| p.z as f64)
                        .fold(spec.z_min, f64::max);
                    assert_eq!(g.height(r, c, s), want);
                }
            }
        }
    }
}

#[test]
fn top_face_point_lands_in_last_slice() {
    let spec = small();
    let pc = PointCloud::new(vec![Point::new(1.0, 0.0, spec.z_max as f32, 0.0)], "t");
    let g = rasterize_with(&pc, &spec, Exec::Sequential).unwrap();
    let (r, c) = spec.cell_of(1.0, 0.0).unwrap();
    assert_eq!(g.height(r, c, spec.num_slices - 1), spec.z_max);
}

#[test]
fn sequential_and_parallel_agree() {
    let spec = RangeSpec::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pc = cloud(&mut rng, &spec, 20_000);
    assert_eq!(
        rasterize_with(&pc, &spec, Exec::Sequential).unwrap(),
        rasterize_with(&pc, &spec, Exec::Parallel).unwrap()
    );
}

#[test]
fn invalid_spec_is_rejected() {
    let spec = RangeSpec {
        xy_resolution: 0.7,
        ..small()
    };
    assert!(matches!(
        rasterize_with(&PointCloud::default(), &spec, Exec::Sequential),
        Err(Error::Spec(_))
    ));
}

#[test]
fn grid_file_roundtrip() {
    let spec = small();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = rasterize_with(&cloud(&mut rng, &spec, 300), &spec, Exec::Sequential).unwrap();
    let f = decode_grid(&encode_grid(&g)).unwrap();
    assert_eq!((f.rows, f.cols, f.channels), g.shape());
    assert_eq!(f.resolution, 0.5);
    for (a, b) in f.values.iter().zip(g.data()) {
        assert_eq!(*a, *b as f32);
    }
}

#[test]
fn cloud_codec_examples() {
    let mut bytes = Vec::new();
    for v in [1.0f32, 2.0, 0.5, 0.3, -1.0, 0.0, 0.0, 1.0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let pc = decode_cloud(&bytes, "f").unwrap();
    assert_eq!(pc.points, vec![Point::new(1.0, 2.0, 0.5, 0.3), Point::new(-1.0, 0.0, 0.0, 1.0)]);
    assert_eq!(encode_cloud(&pc), bytes);
    assert!(decode_cloud(&[], "f").unwrap().is_empty());
    assert!(matches!(decode_cloud(&[0u8; 20], "f"), Err(Error::Format { .. })));
}

#[test]
fn crop_examples() {
    let spec = RangeSpec::standard();
    let pc = PointCloud::new(vec![Point::new(35.0, 0.0, 1.0, 0.0), Point::new(70.0, 0.0, 1.0, 0.0)], "c");
    assert_eq!(crop_range(&pc, &spec).points, vec![Point::new(35.0, 0.0, 1.0, 0.0)]);
}

#[test]
fn label_examples() {
    let objs = parse_labels("# header\nCar 10.0 0.0 0.8 4.0 1.8 1.5 0.0 Easy\n").unwrap();
    assert_eq!(objs.len(), 1);
    assert_eq!((objs[0].bbox.cx, objs[0].bbox.cy, objs[0].bbox.cz), (10.0, 0.0, 0.8));
    match parse_labels("Car 1 2 3 4 5\n") {
        Err(Error::Format { line: Some(1), .. }) => {}
        other => panic!("expected a line-1 format error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn rasterize_ignores_point_order(seed in 0u64..1000) {
        let spec = small();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pc = cloud(&mut rng, &spec, 200);
        let mut rev = pc.clone();
        rev.points.reverse();
        prop_assert_eq!(
            rasterize_with(&pc, &spec, Exec::Sequential).unwrap(),
            rasterize_with(&rev, &spec, Exec::Sequential).unwrap()
        );
    }

    #[test]
    fn adding_a_point_never_lowers_values(seed in 0u64..1000) {
        let spec = small();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pc = cloud(&mut rng, &spec, 100);
        let mut more = pc.clone();
        more.points.extend(cloud(&mut rng, &spec, 1).points);
        let (a, b) = (
            rasterize_with(&pc, &spec, Exec::Sequential).unwrap(),
            rasterize_with(&more, &spec, Exec::Sequential).unwrap(),
        );
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn crop_is_an_idempotent_subsequence(seed in 0u64..1000) {
        let spec = small();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wide = RangeSpec { x_min: -2.0, x_max: 8.0, y_min: -5.0, y_max: 5.0, ..small() };
        let pc = cloud(&mut rng, &wide, 300);
        let once = crop_range(&pc, &spec);
        prop_assert_eq!(&crop_range(&once, &spec), &once);
        let brute: Vec<Point> = pc.points.iter().copied().filter(|p| {
            let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
            x >= spec.x_min && x < spec.x_max && y >= spec.y_min && y < spec.y_max && z >= spec.z_min && z < spec.z_max
        }).collect();
        prop_assert_eq!(once.points, brute);
    }
}
