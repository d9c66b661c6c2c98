//! Heatmap evolution: per-step latent interpretations (decoded chain text
//! plus patch-similarity heatmaps) next to the ground-truth patch mask.

use crate::data::vocab::SynthVocab;
use crate::error::{Error, Result};
use crate::image::Mask;
use crate::io::{write_pgm, write_signed_heatmap_pgm};
use crate::latent::{run_full_inference, DeployMode};
use crate::model::VitalModel;
use crate::numerics::store::ParamStore;
use crate::roi::{downsample_mask, FrozenEncoder, Pathway, PixelRegion, RoiConfig};
use crate::scaffold::interpret_latent;
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::train::TrainSample;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct HeatmapStep {
    pub step: usize,
    pub heatmap: Vec<f64>,
    pub decoded_text: String,
}

#[derive(Debug, Clone)]
pub struct HeatmapEvolution {
    pub grid: usize,
    pub steps: Vec<HeatmapStep>,
    /// Binarized ground-truth mask on the patch grid.
    pub gt_cells: Vec<bool>,
}

impl HeatmapEvolution {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,cell,row,col,cosine\n");
        for s in &self.steps {
            for (i, &v) in s.heatmap.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{:.6}\n",
                    s.step,
                    i,
                    i / self.grid,
                    i % self.grid,
                    v
                ));
            }
        }
        out
    }

    /// Writes one graymap per step plus the ground-truth companion file
    /// and the raw-cosine CSV. Returns the written paths.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for s in &self.steps {
            let path = dir.join(format!("{stem}_z{}.pgm", s.step));
            write_signed_heatmap_pgm(&path, self.grid, &s.heatmap)?;
            written.push(path);
        }
        let gt: Vec<f64> = self
            .gt_cells
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        let gt_path = dir.join(format!("{stem}_gt.pgm"));
        write_pgm(&gt_path, self.grid, &gt)?;
        written.push(gt_path);
        let csv_path = dir.join(format!("{stem}_cosines.csv"));
        std::fs::write(&csv_path, self.to_csv())?;
        written.push(csv_path);
        let chains: String = self
            .steps
            .iter()
            .map(|s| format!("z{}: {}\n", s.step, s.decoded_text))
            .collect();
        let txt_path = dir.join(format!("{stem}_chains.txt"));
        std::fs::write(&txt_path, chains)?;
        written.push(txt_path);
        Ok(written)
    }
}

/// Runs a K-step trace and interprets every latent state against the
/// sample's full-image patch features. Requires re-attached scaffolding.
pub fn heatmap_evolution<F: Real>(
    model: &VitalModel,
    store: &ParamStore<F>,
    sample: &TrainSample,
    mask: &Mask,
    k: usize,
    roi_config: &RoiConfig,
    encoder: &FrozenEncoder,
    vocab: &SynthVocab,
) -> Result<HeatmapEvolution> {
    if !store.contains(crate::scaffold::PJ_IN_W) {
        return Err(Error::Detached(
            "heatmap evolution requires re-attached scaffolding".into(),
        ));
    }
    let (_, trace) = run_full_inference(
        model,
        store,
        &sample.image,
        &sample.question_tokens,
        k,
        0,
        DeployMode::Tolerant,
    )?;
    let region = PixelRegion::new(sample.image.size(), sample.image.pixels().to_vec())?;
    let patch_map = encoder.encode(&region, Pathway::Full);
    let mut steps = Vec::with_capacity(trace.states.len());
    for (i, z) in trace.states.iter().enumerate() {
        let z64: Tensor<F> = z.clone();
        let interp = interpret_latent(&model.scaffold, store, &z64, &patch_map.features)?;
        steps.push(HeatmapStep {
            step: i + 1,
            heatmap: interp.heatmap,
            decoded_text: vocab.detokenize(&interp.tokens),
        });
    }
    let ds = downsample_mask(mask, roi_config.patch_grid, roi_config.binarize)?;
    Ok(HeatmapEvolution {
        grid: roi_config.patch_grid,
        steps,
        gt_cells: ds.cells,
    })
}
