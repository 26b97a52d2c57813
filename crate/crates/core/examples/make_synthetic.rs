//! Writes the five-case synthetic set under `fixtures/synthetic/`.
//!
//! Every case is a 16x16 slice with unit spacing and one class, `liver`.
//! Ground truth holds nine 2x2 blobs on a 3x3 lattice. Predictions are the
//! same blobs with one edit per case plus, where noted, a bright 2x2
//! outlier in the corner that the priors reject.
//!
//! | case  | prediction vs ground truth            | outlier |
//! |-------|----------------------------------------|---------|
//! | case1 | identical                              | yes     |
//! | case2 | centre blob shifted down one row       | yes     |
//! | case3 | centre blob missing                    | yes     |
//! | case4 | ground truth lacks the top-left blob   | yes     |
//! | case5 | empty                                  | no      |

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use sfda_core::tensor_io::{write_tensor, Tensor};
use sfda_core::{Grid, GridImage, LabelMask, SampleFormat};

const N: usize = 16;
const ORGAN: f32 = 128.0;
const OUTLIER: f32 = 250.0;
const BACKGROUND: f32 = 20.0;
const LATTICE: [usize; 3] = [1, 6, 11];

type Blob = (usize, usize);

fn blobs() -> Vec<Blob> {
    LATTICE.iter().flat_map(|&y| LATTICE.iter().map(move |&x| (y, x))).collect()
}

fn paint(labels: &mut [u32], blobs: &[Blob]) {
    for &(y, x) in blobs {
        for dy in 0..2 {
            for dx in 0..2 {
                labels[(y + dy) * N + x + dx] = 1;
            }
        }
    }
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic");
    for sub in ["images", "pred", "gt"] {
        fs::create_dir_all(root.join(sub)).unwrap();
    }
    let grid = Grid::new(vec![N, N], vec![1.0, 1.0]).unwrap();
    let names: BTreeMap<u32, String> = [(1, "liver".to_string())].into();
    let all = blobs();
    let centre = (6, 6);
    let corner_outlier = (14, 14);

    let cases: Vec<(&str, Vec<Blob>, Vec<Blob>, bool)> = vec![
        ("case1", all.clone(), all.clone(), true),
        (
            "case2",
            all.iter().map(|&b| if b == centre { (7, 6) } else { b }).collect(),
            all.clone(),
            true,
        ),
        ("case3", all.iter().copied().filter(|&b| b != centre).collect(), all.clone(), true),
        ("case4", all.clone(), all.iter().copied().filter(|&b| b != (1, 1)).collect(), true),
        ("case5", vec![], all.clone(), false),
    ];

    for (name, pred_blobs, gt_blobs, outlier) in cases {
        let mut pred = vec![0u32; N * N];
        let mut gt = vec![0u32; N * N];
        paint(&mut pred, &pred_blobs);
        paint(&mut gt, &gt_blobs);
        let mut image = vec![BACKGROUND; N * N];
        for i in 0..N * N {
            if pred[i] != 0 || gt[i] != 0 {
                image[i] = ORGAN;
            }
        }
        if outlier {
            let mut o = vec![0u32; N * N];
            paint(&mut o, &[corner_outlier]);
            for i in 0..N * N {
                if o[i] != 0 {
                    pred[i] = 1;
                    image[i] = OUTLIER;
                }
            }
        }
        let img = GridImage::new(grid.clone(), 1, SampleFormat::U8, image).unwrap();
        write_tensor(root.join(format!("images/{name}.srt")), &Tensor::Image(img)).unwrap();
        let pm = LabelMask::new(grid.clone(), pred, names.clone()).unwrap();
        write_tensor(root.join(format!("pred/{name}.srt")), &Tensor::Mask(pm)).unwrap();
        let gm = LabelMask::new(grid.clone(), gt, names.clone()).unwrap();
        write_tensor(root.join(format!("gt/{name}.srt")), &Tensor::Mask(gm)).unwrap();
    }
}
