//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use sfda_core::rng::SplitMix64;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

/// Components by breadth-first flood fill, as `(label, sorted voxels)`
/// ordered by smallest voxel.
pub fn flood_components(labels: &[u32], dims: [usize; 3], full: bool) -> Vec<(u32, Vec<usize>)> {
    let [nz, ny, nx] = dims;
    let mut seen = vec![false; labels.len()];
    let mut out = Vec::new();
    for start in 0..labels.len() {
        if labels[start] == 0 || seen[start] {
            continue;
        }
        let label = labels[start];
        let mut voxels = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            voxels.push(i);
            let (z, y, x) = ((i / (ny * nx)) as isize, ((i / nx) % ny) as isize, (i % nx) as isize);
            for dz in -1isize..=1 {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let steps = dz.abs() + dy.abs() + dx.abs();
                        if steps == 0 || (!full && steps > 1) {
                            continue;
                        }
                        let (zz, yy, xx) = (z + dz, y + dy, x + dx);
                        if zz < 0 || yy < 0 || xx < 0 || zz >= nz as isize || yy >= ny as isize || xx >= nx as isize {
                            continue;
                        }
                        let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                        if !seen[j] && labels[j] == label {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        voxels.sort_unstable();
        out.push((label, voxels));
    }
    out
}

fn coords(i: usize, dims: [usize; 3]) -> [usize; 3] {
    [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]]
}

/// Members with a face neighbor (in-plane only when `planar`) that is not
/// a member or lies outside the grid.
pub fn brute_surface(member: &[bool], dims: [usize; 3], planar: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..member.len() {
        if !member[i] {
            continue;
        }
        let c = coords(i, dims);
        let mut neighbors: Vec<[isize; 3]> = vec![[0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];
        if !planar {
            neighbors.extend([[-1, 0, 0], [1, 0, 0]]);
        }
        let boundary = neighbors.iter().any(|d| {
            let n: Vec<isize> = (0..3).map(|k| c[k] as isize + d[k]).collect();
            if (0..3).any(|k| n[k] < 0 || n[k] >= dims[k] as isize) {
                return true;
            }
            !member[(n[0] as usize * dims[1] + n[1] as usize) * dims[2] + n[2] as usize]
        });
        if boundary {
            out.push(i);
        }
    }
    out
}

/// `(sx dx)^2 + ((sy dy)^2 + (sz dz)^2)`, the association the distance
/// transform uses, so results agree bit for bit on dyadic spacings.
pub fn squared_distance(a: usize, b: usize, dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    let (ca, cb) = (coords(a, dims), coords(b, dims));
    let t: Vec<f64> = (0..3).map(|k| spacing[k] * (ca[k] as f64 - cb[k] as f64)).collect();
    t[2] * t[2] + (t[1] * t[1] + t[0] * t[0])
}

fn brute_directed(from: &[usize], to: &[usize], dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    from.iter()
        .map(|&a| {
            to.iter()
                .map(|&b| squared_distance(a, b, dims, spacing))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum::<f64>()
        / from.len() as f64
}

/// All-pairs average symmetric surface distance; `None` when either
/// surface is empty.
pub fn brute_asd(pred: &[bool], gt: &[bool], dims: [usize; 3], spacing: [f64; 3], planar: bool) -> Option<f64> {
    let sp = brute_surface(pred, dims, planar);
    let sg = brute_surface(gt, dims, planar);
    if sp.is_empty() || sg.is_empty() {
        return None;
    }
    Some((brute_directed(&sp, &sg, dims, spacing) + brute_directed(&sg, &sp, dims, spacing)) / 2.0)
}

/// Every string over `alphabet` of length at most `max_len`, shortest first.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut all = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::with_capacity(frontier.len() * alphabet.len());
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// Edit distance straight from the recursive definition, memoized.
pub fn lev_recursive(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut Vec<Option<usize>>, w: usize) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(v) = memo[i * w + j] {
            return v;
        }
        let cost = usize::from(a[i - 1] != b[j - 1]);
        let v = (go(a, b, i - 1, j, memo, w) + 1)
            .min(go(a, b, i, j - 1, memo, w) + 1)
            .min(go(a, b, i - 1, j - 1, memo, w) + cost);
        memo[i * w + j] = Some(v);
        v
    }
    let w = b.len() + 1;
    let mut memo = vec![None; (a.len() + 1) * w];
    go(a, b, a.len(), b.len(), &mut memo, w)
}

/// Checks `f(a, b)` against the recursive definition for `a` and every
/// string `b` over `alphabet` up to `max_len`, extending `b` one letter at a
/// time so the recursion's last column is reused. Returns the pair count.
pub fn check_against_recursion<F: Fn(&str, &str) -> usize>(
    a: &str,
    alphabet: &[char],
    max_len: usize,
    f: &F,
) -> usize {
    let ac: Vec<char> = a.chars().collect();
    // col[i] = L(a[..i], b)
    fn walk<F: Fn(&str, &str) -> usize>(
        a: &str,
        ac: &[char],
        b: &mut String,
        col: &[usize],
        alphabet: &[char],
        left: usize,
        f: &F,
    ) -> usize {
        assert_eq!(f(a, b), col[ac.len()], "levenshtein({a:?}, {b:?})");
        let mut n = 1;
        if left == 0 {
            return n;
        }
        let mut next = vec![col[0] + 1; ac.len() + 1];
        for &c in alphabet {
            next[0] = col[0] + 1;
            for i in 1..=ac.len() {
                let cost = usize::from(ac[i - 1] != c);
                next[i] = (col[i] + 1).min(next[i - 1] + 1).min(col[i - 1] + cost);
            }
            b.push(c);
            n += walk(a, ac, b, &next, alphabet, left - 1, f);
            b.pop();
        }
        n
    }
    let col: Vec<usize> = (0..=ac.len()).collect();
    walk(a, &ac, &mut String::new(), &col, alphabet, max_len, f)
}

/// Sup distance between empirical CDFs, evaluated at every sample point by
/// counting.
pub fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .chain(b)
        .map(|&t| {
            let fa = a.iter().filter(|&&v| v <= t).count() as f64 / a.len() as f64;
            let fb = b.iter().filter(|&&v| v <= t).count() as f64 / b.len() as f64;
            (fa - fb).abs()
        })
        .fold(0.0, f64::max)
}

/// Random label volume: dims drawn in `1..=max_side` (z fixed to 1 for
/// 2-D), labels in `0..=classes` with background weighted by `fill`.
pub fn random_labels(rng: &mut SplitMix64, max_side: u64, planar: bool, classes: u64) -> ([usize; 3], Vec<u32>) {
    let nz = if planar { 1 } else { 1 + rng.below(max_side) as usize };
    let ny = 1 + rng.below(max_side) as usize;
    let nx = 1 + rng.below(max_side) as usize;
    let fill = 0.2 + 0.6 * rng.next_f64();
    let labels = (0..nz * ny * nx)
        .map(|_| {
            if rng.next_f64() < fill {
                1 + rng.below(classes) as u32
            } else {
                0
            }
        })
        .collect();
    ([nz, ny, nx], labels)
}

/// Lines of one `# section` of the golden prompt fixture.
pub fn golden_section(name: &str) -> Vec<String> {
    let text = std::fs::read_to_string(fixture("prompts/canonical_golden.txt")).unwrap();
    let mut current = None;
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(h) = line.strip_prefix('#') {
            current = Some(h.trim().to_string());
        } else if !line.trim().is_empty() && current.as_deref() == Some(name) {
            out.push(line.to_string());
        }
    }
    out
}

/// Oracle check of `levenshtein` over every pair of strings on {a,b,c} up
/// to `max_len`. Returns the number of pairs compared.
pub fn levenshtein_exhaustive(max_len: usize) -> usize {
    let alphabet = ['a', 'b', 'c'];
    let f = |a: &str, b: &str| sfda_core::chaos::levenshtein(a, b);
    all_strings(&alphabet, max_len)
        .iter()
        .map(|a| check_against_recursion(a, &alphabet, max_len, &f))
        .sum()
}

// ---- criterion checks, shared by the oracle tests and the acceptance run ----

use sfda_core::components::{extract_components, Connectivity};
use sfda_core::imgproc::histogram_equalize;
use sfda_core::metrics::{asd, AsdMode};
use sfda_core::{Grid, GridImage, LabelMask, SampleFormat};

pub type Check = Result<String, String>;

fn names(classes: u32) -> std::collections::BTreeMap<u32, String> {
    (1..=classes).map(|l| (l, format!("class{l}"))).collect()
}

pub fn mask_from(dims3: [usize; 3], planar: bool, spacing: [f64; 3], labels: Vec<u32>) -> LabelMask {
    let grid = if planar {
        Grid::new(vec![dims3[1], dims3[2]], vec![spacing[1], spacing[2]]).unwrap()
    } else {
        Grid::new(dims3.to_vec(), spacing.to_vec()).unwrap()
    };
    LabelMask::new(grid, labels, names(3)).unwrap()
}

/// `extract_components` against flood fill on `count` random masks, each
/// under both connectivities. Every fourth mask is 2-D.
pub fn component_oracle(count: usize, max_side: u64, seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let mut voxels = 0;
    for n in 0..count {
        let planar = n % 4 == 0;
        let (dims, labels) = random_labels(&mut rng, max_side, planar, 3);
        voxels += labels.len();
        let mask = mask_from(dims, planar, [1.0; 3], labels.clone());
        for (conn, full) in [(Connectivity::Face, false), (Connectivity::Full, true)] {
            let got: Vec<(u32, Vec<usize>)> = extract_components(&mask, conn)
                .by_class.into_values().flat_map(|cs| cs.into_iter().map(|c| (c.label, c.voxels)))
                .collect();
            let mut want = flood_components(&labels, dims, full);
            want.sort_by_key(|(l, v)| (*l, v[0]));
            if got != want {
                return Err(format!("mask {n} dims {dims:?} {conn:?}: {} components vs {}", got.len(), want.len()));
            }
        }
    }
    Ok(format!("{count} masks, {voxels} voxels, both connectivities"))
}

const DYADIC: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

/// `asd` against all-pairs surface distances on `count` random mask pairs,
/// in both modes, requiring bit-equal results.
pub fn asd_oracle(count: usize, max_side: u64, seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    let mut compared = 0;
    for n in 0..count {
        let planar = n % 5 == 0;
        let (dims, a) = random_labels(&mut rng, max_side, planar, 1);
        // second mask on the same grid
        let b: Vec<u32> = (0..a.len()).map(|_| u32::from(rng.bernoulli(0.4))).collect();
        let spacing = [0, 1, 2].map(|_| DYADIC[rng.below(4) as usize]);
        let pred = mask_from(dims, planar, spacing, a.clone());
        let gt = mask_from(dims, planar, spacing, b.clone());
        let pa: Vec<bool> = a.iter().map(|&l| l == 1).collect();
        let pb: Vec<bool> = b.iter().map(|&l| l == 1).collect();
        let sp = if planar { [1.0, spacing[1], spacing[2]] } else { spacing };

        let want = brute_asd(&pa, &pb, dims, sp, planar);
        let got = asd(&pred, &gt, 1, AsdMode::Volume).map_err(|e| e.to_string())?;
        if got.map(f64::to_bits) != want.map(f64::to_bits) {
            return Err(format!("pair {n} dims {dims:?} volume: {got:?} vs {want:?}"));
        }

        let [nz, ny, nx] = dims;
        let len = ny * nx;
        let per: Vec<f64> = (0..nz)
            .filter_map(|z| {
                let r = z * len..(z + 1) * len;
                brute_asd(&pa[r.clone()], &pb[r], [1, ny, nx], sp, true)
            })
            .collect();
        let want = (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64);
        let got = asd(&pred, &gt, 1, AsdMode::Slice).map_err(|e| e.to_string())?;
        if got.map(f64::to_bits) != want.map(f64::to_bits) {
            return Err(format!("pair {n} dims {dims:?} slice: {got:?} vs {want:?}"));
        }
        compared += 1;
    }
    Ok(format!("{compared} pairs, volume and slice modes, bit-exact"))
}

/// Monotone, in-range equalization on `count` random 8-bit images.
pub fn he_monotone(count: usize, seed: u64) -> Check {
    let mut rng = SplitMix64::new(seed);
    for n in 0..count {
        let (h, w) = (1 + rng.below(24) as usize, 1 + rng.below(24) as usize);
        // narrow random band so many images are skewed
        let lo = rng.below(200) as f32;
        let span = 1 + rng.below(56);
        let values: Vec<f32> = (0..h * w).map(|_| lo + rng.below(span) as f32).collect();
        let img = GridImage::new(Grid::unit(vec![h, w]).unwrap(), 1, SampleFormat::U8, values).unwrap();
        let out = histogram_equalize(&img, 256).map_err(|e| e.to_string())?;
        let mut pairs: Vec<(f32, f32)> = img.values().iter().copied().zip(out.values().iter().copied()).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        if pairs.iter().any(|p| !(0.0..=255.0).contains(&p.1)) {
            return Err(format!("image {n}: output out of range"));
        }
        if pairs.windows(2).any(|w| w[1].1 < w[0].1 || (w[0].0 == w[1].0 && w[0].1 != w[1].1)) {
            return Err(format!("image {n}: mapping not monotone"));
        }
    }
    Ok(format!("{count} random images"))
}
