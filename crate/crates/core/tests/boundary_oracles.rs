use gauss_digits::boundary::{
    analyze, canny, decompose_regions, gradients, BoundaryParams, CannyParams, EdgeMap, EdgeMode,
};
use gauss_digits::dataset::{trace_source, GenerationParams};
use gauss_digits::randomness::derive_stream;
use gauss_digits::source::ProceduralDigits;
use gauss_digits::{BinaryImage, Region};

fn filled_square(top: usize, left: usize, n: usize) -> BinaryImage {
    BinaryImage::from_fn(32, 32, |r, c| (top..top + n).contains(&r) && (left..left + n).contains(&c)).unwrap()
}

fn clamp_reflect(i: isize, n: usize) -> usize {
    // symmetric border, repeated until inside
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
    }
    i as usize
}

/// Direct (non-separable) 2-D Gaussian blur then Sobel, evaluated pixel by pixel.
fn oracle_magnitude(img: &BinaryImage, sigma: f64) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            kernel.push((dy, dx, (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
        }
    }
    let norm: f64 = kernel.iter().map(|k| k.2).sum();
    let blurred = |r: isize, c: isize| -> f64 {
        let (r, c) = (clamp_reflect(r, h), clamp_reflect(c, w));
        kernel
            .iter()
            .map(|&(dy, dx, k)| {
                let v = img.get(clamp_reflect(r as isize + dy, h), clamp_reflect(c as isize + dx, w));
                k * if v { 255.0 } else { 0.0 }
            })
            .sum::<f64>()
            / norm
    };
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let gx = blurred(r - 1, c + 1) + 2.0 * blurred(r, c + 1) + blurred(r + 1, c + 1)
                - blurred(r - 1, c - 1)
                - 2.0 * blurred(r, c - 1)
                - blurred(r + 1, c - 1);
            let gy = blurred(r + 1, c - 1) + 2.0 * blurred(r + 1, c) + blurred(r + 1, c + 1)
                - blurred(r - 1, c - 1)
                - 2.0 * blurred(r - 1, c)
                - blurred(r - 1, c + 1);
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

fn eight_neighbours(r: usize, c: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1isize..=1)
        .flat_map(|dr| (-1isize..=1).map(move |dc| (dr, dc)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dr, dc)| {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            (nr >= 0 && nc >= 0 && nr < h as isize && nc < w as isize).then_some((nr as usize, nc as usize))
        })
}

fn component_count(e: &EdgeMap) -> usize {
    let (w, h) = (e.width(), e.height());
    let mut seen = vec![false; w * h];
    let mut components = 0;
    for start in 0..w * h {
        if !e.edges()[start] || seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for (nr, nc) in eight_neighbours(i / w, i % w, w, h) {
                let j = nr * w + nc;
                if e.edges()[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    components
}

#[test]
fn canny_gradients_match_direct_convolution() {
    let img = filled_square(11, 11, 10);
    for sigma in [0.7, 1.0, 1.6] {
        let radius = (3.0f64 * sigma).ceil() as usize;
        let fast = gradients(&img.to_gray(), sigma, radius);
        let slow = oracle_magnitude(&img, sigma);
        for (a, b) in fast.magnitude.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b), "sigma {sigma}: {a} vs {b}");
        }
    }
}

#[test]
fn canny_square_is_a_closed_ring() {
    let img = filled_square(11, 11, 10);
    let e = canny(&img, &CannyParams::default()).unwrap();
    assert!((32..=44).contains(&e.count()), "edge count {}", e.count());
    assert_eq!(component_count(&e), 1);
    for r in 0..32 {
        for c in 0..32 {
            if e.get(r, c) {
                let degree = eight_neighbours(r, c, 32, 32).filter(|&(nr, nc)| e.get(nr, nc)).count();
                assert!(degree >= 2, "open end at ({r},{c})");
            }
        }
    }
    // the ring peaks where the oracle magnitude peaks
    let slow = oracle_magnitude(&img, 1.0);
    let max = slow.iter().cloned().fold(0.0, f64::max);
    for i in 0..1024 {
        if e.edges()[i] {
            assert!(slow[i] >= 0.3 * max);
        }
    }
}

#[test]
fn canny_is_deterministic() {
    let src = ProceduralDigits::new(3, 5);
    let params = GenerationParams::default();
    for class in 0..10 {
        let a = trace_source(&src.render(class, 1), &params).unwrap();
        let b = trace_source(&src.render(class, 1), &params).unwrap();
        assert_eq!(a.edges, b.edges);
    }
}

fn random_blobs(seed: u64, n: usize) -> Vec<BinaryImage> {
    let mut s = derive_stream(seed, 0);
    (0..n)
        .map(|_| {
            // a few random rectangles and discs, like coarse strokes
            let shapes: Vec<(usize, usize, usize, usize, bool)> = (0..1 + s.below(4) as usize)
                .map(|_| {
                    (
                        s.below(32) as usize,
                        s.below(32) as usize,
                        1 + s.below(10) as usize,
                        1 + s.below(10) as usize,
                        s.below(2) == 0,
                    )
                })
                .collect();
            BinaryImage::from_fn(32, 32, |r, c| {
                shapes.iter().any(|&(r0, c0, a, b, disc)| {
                    if disc {
                        let (dr, dc) = (r as f64 - r0 as f64, c as f64 - c0 as f64);
                        dr * dr + dc * dc <= (a * a) as f64
                    } else {
                        (r0..r0 + a).contains(&r) && (c0..c0 + b).contains(&c)
                    }
                })
            })
            .unwrap()
        })
        .collect()
}

#[test]
fn canny_edges_stay_near_transitions() {
    for sigma in [0.8, 1.0, 1.5] {
        let params = CannyParams {
            blur_sigma: sigma,
            ..CannyParams::default()
        };
        let reach = (3.0f64 * sigma).ceil() as usize + 1;
        for img in random_blobs(17, 200) {
            let e = canny(&img, &params).unwrap();
            let transition = |r: usize, c: usize| {
                eight_neighbours(r, c, 32, 32).any(|(nr, nc)| img.get(nr, nc) != img.get(r, c))
            };
            for r in 0..32 {
                for c in 0..32 {
                    if !e.get(r, c) {
                        continue;
                    }
                    let near = (r.saturating_sub(reach)..(r + reach + 1).min(32))
                        .any(|rr| (c.saturating_sub(reach)..(c + reach + 1).min(32)).any(|cc| transition(rr, cc)));
                    assert!(near, "edge at ({r},{c}) is farther than {reach} from any transition");
                }
            }
        }
    }
}

/// Each pixel's 8-neighbourhood, checked directly.
fn morphology_oracle(img: &BinaryImage) -> Vec<Region> {
    let mut out = Vec::with_capacity(1024);
    for r in 0..32 {
        for c in 0..32 {
            let me = img.get(r, c);
            let mut differs = false;
            for dr in [-1isize, 0, 1] {
                for dc in [-1isize, 0, 1] {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if (0..32).contains(&nr) && (0..32).contains(&nc) && img.get(nr as usize, nc as usize) != me {
                        differs = true;
                    }
                }
            }
            out.push(match (me, differs) {
                (true, true) => Region::InsideBoundary,
                (true, false) => Region::Inside,
                (false, true) => Region::OutsideBoundary,
                (false, false) => Region::Outside,
            });
        }
    }
    out
}

#[test]
fn morphological_mode_matches_oracle() {
    let mut checked = 0;
    for img in random_blobs(99, 1000) {
        let fg = img.foreground_count();
        if fg == 0 || fg == 1024 {
            continue;
        }
        let p = decompose_regions(&img, &EdgeMap::empty(32, 32), EdgeMode::Morphological).unwrap();
        assert_eq!(p.labels(), &morphology_oracle(&img)[..]);
        checked += 1;
    }
    assert!(checked > 900);
}

#[test]
fn partitions_agree_with_the_binary_mask() {
    for img in random_blobs(5, 300) {
        let fg = img.foreground_count();
        if fg == 0 || fg == 1024 {
            continue;
        }
        for mode in [EdgeMode::CannyGuided, EdgeMode::Morphological] {
            let params = BoundaryParams {
                edge_mode: mode,
                ..BoundaryParams::default()
            };
            let (edges, p) = analyze(&img, &params).unwrap();
            assert_eq!(p.region_sizes().iter().sum::<usize>(), 1024);
            for i in 0..1024 {
                let label = p.labels()[i];
                assert_eq!(label.is_foreground(), img.bits()[i]);
                if mode == EdgeMode::CannyGuided {
                    assert_eq!(label == Region::InsideBoundary, img.bits()[i] && edges.edges()[i]);
                }
            }
        }
    }
}

#[test]
fn canny_regions_are_stable_under_parameter_perturbation() {
    // +/-50% on each parameter moves every region by less than a quarter of
    // the digit's foreground on average over a batch of digits
    let src = ProceduralDigits::new(8, 10);
    let base = GenerationParams::default();
    let perturbed: Vec<CannyParams> = {
        let d = base.boundary.canny;
        vec![
            CannyParams { blur_sigma: d.blur_sigma * 0.5, ..d },
            CannyParams { blur_sigma: d.blur_sigma * 1.5, ..d },
            CannyParams { low_threshold: d.low_threshold * 0.5, ..d },
            CannyParams { low_threshold: d.low_threshold * 1.5, ..d },
            CannyParams { high_threshold: d.high_threshold * 0.5, ..d },
            CannyParams { high_threshold: d.high_threshold * 1.5, ..d },
        ]
    };
    for canny_params in perturbed {
        let mut params = base.clone();
        params.boundary.canny = canny_params;
        let mut total_shift = 0.0;
        let mut total_fg = 0.0;
        for class in 0..10 {
            for index in 0..10 {
                let img = src.render(class, index);
                let a = trace_source(&img, &base).unwrap().partition.region_sizes();
                let b = trace_source(&img, &params).unwrap();
                let fg = b.binary().foreground_count() as f64;
                for k in 0..4 {
                    total_shift += (a[k] as f64 - b.partition.region_sizes()[k] as f64).abs();
                }
                total_fg += fg;
            }
        }
        let ratio = total_shift / total_fg;
        assert!(ratio < 0.25, "{canny_params:?}: shift/foreground = {ratio:.3}");
    }
}
