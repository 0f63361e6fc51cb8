use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{
    default_top_k, finetune_high_dim, run_variant, shortcut_diagnostic, DecoderConfig, FeatureSource, LatentSource,
    Trained, Variant, VariantReport,
};
use crate::error::{LabError, Result};
use crate::flow::{
    euler_sample, shift_factor, toy_shift, train_flow, DataSource, EulerConfig, FlowModel, GlyphSource, LossTrace,
};
use crate::lab::io::{create_dir, write_json, write_points_csv, write_rows_csv};
use crate::lab::manifest::{RunManifest, RunRecord};
use crate::lab::plot::scatter_svg;
use crate::lab::spec::{ExperimentSpec, Space};
use crate::manifold::{make_embedding, GlyphDistribution, RepresentationMap};
use crate::metrics::{compare_spaces, off_manifold_residual, reference_set, MetricsReport, SpaceComparison, TAIL_Q};
use crate::numeric::Tensor;
use crate::oracle::{capacity_probe, verify_decomposition, CapacityConfig};
use crate::par::map_jobs;
use crate::rng::derive_seed;

/// How a spec is executed; none of these enter the config hash.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed_offset: u64,
    pub jobs: usize,
    /// Run seeds one after another. Results are identical either way.
    pub deterministic: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            seed_offset: 0,
            jobs: 1,
            deterministic: true,
        }
    }
}

/// Shared, read-only inputs of every job.
struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    hash: String,
    glyph: GlyphDistribution,
    reference: Tensor,
    out: &'a Path,
}

/// What one seed produced: relative paths plus typed results the coordinator
/// aggregates.
#[derive(Default)]
struct SeedOutput {
    files: Vec<PathBuf>,
    metrics: Vec<MetricsReport>,
    variants: Vec<VariantReport>,
}

impl Ctx<'_> {
    fn file(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    fn euler(&self, shift: f64) -> EulerConfig {
        EulerConfig::new(self.spec.eval.euler_steps, shift)
    }

    /// Train a flow on `data`, sample it, and return the samples with the trace.
    fn flow_samples(&self, data: &dyn DataSource, seed: u64) -> Result<(Tensor, LossTrace)> {
        let dim = data.dim();
        let shift = self.spec.sampler.shift.unwrap_or_else(|| toy_shift(dim));
        let sampler = self.spec.sampler.sampler(shift);
        let mut model = FlowModel::new(self.spec.model.flow_config(dim), derive_seed(seed, "flow-model"))?;
        let trace = train_flow(
            &mut model,
            data,
            &sampler,
            &self.spec.training,
            derive_seed(seed, "flow-train"),
        )?;
        let samples = euler_sample(
            &model,
            self.spec.eval.samples,
            &self.euler(shift),
            derive_seed(seed, "flow-sample"),
        )?;
        Ok((samples, trace))
    }

    /// Write metrics, samples, trace and plot for one space under `dir`.
    fn emit(
        &self,
        dir: &Path,
        report: &MetricsReport,
        planar: &Tensor,
        trace: &LossTrace,
        extra: Option<(&str, &Tensor)>,
        out: &mut SeedOutput,
    ) -> Result<()> {
        create_dir(&self.file(dir))?;
        let n_ref = self.spec.eval.plot_reference.min(self.reference.rows());
        let plot_ref = self.reference.select_rows(&(0..n_ref).collect::<Vec<_>>())?;
        let svg = scatter_svg(planar, &plot_ref)?;
        let mut rels = vec![
            dir.join("metrics.json"),
            dir.join("samples.csv"),
            dir.join("loss.csv"),
            dir.join("plot.svg"),
        ];
        write_json(&self.file(&rels[0]), report)?;
        write_points_csv(&self.file(&rels[1]), planar)?;
        let f = std::fs::File::create(self.file(&rels[2])).map_err(|e| LabError::io(self.file(&rels[2]), e))?;
        trace.write_csv(f)?;
        std::fs::write(self.file(&rels[3]), svg).map_err(|e| LabError::io(self.file(&rels[3]), e))?;
        if let Some((name, t)) = extra {
            let rel = dir.join(name);
            write_points_csv(&self.file(&rel), t)?;
            rels.push(rel);
        }
        out.files.extend(rels);
        out.metrics.push(report.clone());
        Ok(())
    }
}

fn seed_dir(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed-{seed}"))
}

fn toy_ps(ctx: &Ctx, seed: u64, h: usize) -> Result<SeedOutput> {
    let mut out = SeedOutput::default();
    let glyph = &ctx.glyph;
    let base = seed_dir(seed);

    let (s2, t2) = ctx.flow_samples(&GlyphSource { glyph, embedding: None }, seed)?;
    let r2 = MetricsReport::measure("intrinsic", seed, &ctx.hash, &s2, &ctx.reference, TAIL_Q)?;
    ctx.emit(&base.join("intrinsic"), &r2, &s2, &t2, None, &mut out)?;

    let q = make_embedding(h, 2, derive_seed(seed, "toy-embedding"))?;
    let (sh, th) = ctx.flow_samples(
        &GlyphSource {
            glyph,
            embedding: Some(&q),
        },
        seed,
    )?;
    let projected = q.project(&sh)?;
    let rh = MetricsReport::measure(
        Space::Ambient { h }.label(),
        seed,
        &ctx.hash,
        &projected,
        &ctx.reference,
        TAIL_Q,
    )?
    .with_residuals(&off_manifold_residual(&q, &sh)?);
    ctx.emit(
        &base.join(Space::Ambient { h }.label()),
        &rh,
        &projected,
        &th,
        Some(("ambient_samples.csv", &sh)),
        &mut out,
    )?;
    Ok(out)
}

fn decomposition(ctx: &Ctx, seed: u64, h: usize) -> Result<SeedOutput> {
    let q = make_embedding(h, 2, derive_seed(seed, "decomposition-embedding"))?;
    let atoms = ctx
        .glyph
        .sample(ctx.spec.decomposition.atoms, derive_seed(seed, "decomposition-atoms"))?
        .points;
    let report = verify_decomposition(&q, &atoms, ctx.spec.decomposition.trials, seed)?;
    let rel = seed_dir(seed).join("decomposition.json");
    create_dir(&ctx.file(seed_dir(seed)))?;
    write_json(&ctx.file(&rel), &report)?;
    Ok(SeedOutput {
        files: vec![rel],
        ..SeedOutput::default()
    })
}

fn capacity(ctx: &Ctx, seed: u64) -> Result<SeedOutput> {
    let cfg = CapacityConfig {
        h: ctx.spec.space.dim(),
        widths: ctx.spec.capacity.widths.clone(),
        wide_head: ctx.spec.capacity.wide_head.clone(),
        depth: ctx.spec.model.depth,
        train: ctx.spec.training.clone(),
        shift: ctx.spec.sampler.shift,
    };
    let report = capacity_probe(&ctx.glyph, &cfg, seed, 1)?;
    create_dir(&ctx.file(seed_dir(seed)))?;
    let json = seed_dir(seed).join("capacity.json");
    let csv = seed_dir(seed).join("capacity.csv");
    write_json(&ctx.file(&json), &report)?;
    write_rows_csv(&ctx.file(&csv), &report.entries)?;
    Ok(SeedOutput {
        files: vec![json, csv],
        ..SeedOutput::default()
    })
}

fn ladder(ctx: &Ctx, seed: u64) -> Result<SeedOutput> {
    let mut out = SeedOutput::default();
    let codec_cfg = ctx.spec.effective_codec();
    let target = match ctx.spec.space {
        Space::Svae { .. } => Variant::SVae,
        Space::Psvae { .. } => Variant::PsVae,
        _ => Variant::PVae,
    };
    let rae_cfg = DecoderConfig {
        steps: codec_cfg.stage1_steps,
        batch: codec_cfg.batch,
        lr: codec_cfg.lr,
        hidden: codec_cfg.hidden,
        hidden_layers: codec_cfg.hidden_layers,
    };
    let mut latent_codec = None;
    let mut rae_decoder = None;
    for v in Variant::ALL {
        let (report, trained) = run_variant(v, &codec_cfg, &rae_cfg, &ctx.glyph, seed)?;
        match trained {
            Trained::Rae(d) => rae_decoder = Some(d),
            Trained::Codec(c) if v == target => latent_codec = Some(c),
            Trained::Codec(_) => {}
        }
        out.variants.push(report);
    }
    let (codec, rae) = (
        latent_codec.expect("target variant trained"),
        rae_decoder.expect("rae trained"),
    );
    let base = seed_dir(seed);
    create_dir(&ctx.file(&base))?;
    let rel = base.join("ladder.json");
    write_json(&ctx.file(&rel), &out.variants)?;
    out.files.push(rel);

    let pixel_mse_of = |v: Variant| out.variants.iter().find(|r| r.variant == v).map(|r| r.pixel_mse);
    let (target_mse, rae_mse) = (pixel_mse_of(target), pixel_mse_of(Variant::Rae));
    let (z, tz) = ctx.flow_samples(
        &LatentSource {
            codec: &codec,
            glyph: &ctx.glyph,
        },
        seed,
    )?;
    let pixels = codec.decode_pipeline(&z)?;
    let mut rz = MetricsReport::measure(ctx.spec.space.label(), seed, &ctx.hash, &pixels, &ctx.reference, TAIL_Q)?;
    if let Some(m) = target_mse {
        rz = rz.with_pixel_mse(m);
    }
    ctx.emit(
        &base.join(ctx.spec.space.label()),
        &rz,
        &pixels,
        &tz,
        Some(("latent_samples.csv", &z)),
        &mut out,
    )?;

    let rae_space = Space::Rae {
        d_h: codec_cfg.rep.width,
    };
    let (f, tf) = ctx.flow_samples(
        &FeatureSource {
            map: rae.map(),
            glyph: &ctx.glyph,
        },
        seed,
    )?;
    let pixels = rae.decode(&f)?;
    let mut rf = MetricsReport::measure(rae_space.label(), seed, &ctx.hash, &pixels, &ctx.reference, TAIL_Q)?;
    if let Some(m) = rae_mse {
        rf = rf.with_pixel_mse(m);
    }
    ctx.emit(&base.join(rae_space.label()), &rf, &pixels, &tf, None, &mut out)?;
    Ok(out)
}

fn shortcut(ctx: &Ctx, seed: u64) -> Result<SeedOutput> {
    let codec = ctx.spec.effective_codec();
    let frozen = RepresentationMap::new(codec.rep.clone(), &ctx.glyph, derive_seed(seed, "shortcut-rep"))?;
    let ft = &ctx.spec.shortcut.finetune;
    let (working, trace) = finetune_high_dim(&frozen, &ctx.glyph, ft, derive_seed(seed, "shortcut-finetune"))?;
    let k = ctx.spec.shortcut.top_k.unwrap_or_else(|| default_top_k(frozen.width()));
    let report = shortcut_diagnostic(&working, &frozen, &ctx.glyph, k, &ft.decoder, seed)?;
    let base = seed_dir(seed);
    create_dir(&ctx.file(&base))?;
    let (json, loss) = (base.join("shortcut.json"), base.join("finetune_loss.csv"));
    write_json(&ctx.file(&json), &report)?;
    let f = std::fs::File::create(ctx.file(&loss)).map_err(|e| LabError::io(ctx.file(&loss), e))?;
    trace.write_csv(f)?;
    Ok(SeedOutput {
        files: vec![json, loss],
        ..SeedOutput::default()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub channels: u64,
    pub patch: u64,
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyShiftRow {
    pub dim: usize,
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftTable {
    pub latent: Vec<ShiftRow>,
    pub toy: Vec<ToyShiftRow>,
}

/// Shift factors for common latent layouts and the toy spaces.
pub fn shift_table() -> Result<ShiftTable> {
    let latent = [(4, 8), (16, 1), (16, 2), (32, 1), (96, 1), (768, 1), (1152, 1)]
        .into_iter()
        .map(|(c, p)| {
            Ok(ShiftRow {
                channels: c,
                patch: p,
                shift: shift_factor(c, p)?,
            })
        })
        .collect::<Result<_>>()?;
    let toy = [2, 8, 16, 64, 768]
        .into_iter()
        .map(|d| ToyShiftRow {
            dim: d,
            shift: toy_shift(d),
        })
        .collect();
    Ok(ShiftTable { latent, toy })
}

/// The file every run writes its aggregate into, if the recipe has one.
pub fn summary_name(recipe: &str) -> Option<&'static str> {
    match recipe {
        "toy-ps-2d-vs-8d" | "ladder-rae-svae-pvae-psvae" => Some("comparison.json"),
        "shift-table" => Some("shift_table.json"),
        _ => None,
    }
}

/// Execute `spec` once per seed and write the manifest.
pub fn run(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunManifest> {
    spec.validate()?;
    create_dir(&opts.out)?;
    let glyph = GlyphDistribution::builtin()?;
    let needs_reference = matches!(spec.recipe.as_str(), "toy-ps-2d-vs-8d" | "ladder-rae-svae-pvae-psvae");
    let reference = if needs_reference {
        reference_set(&glyph)?
    } else {
        Tensor::zeros(&[0, 2])
    };
    let ctx = Ctx {
        spec,
        hash: spec.config_hash(),
        glyph,
        reference,
        out: &opts.out,
    };
    let seeds: Vec<u64> = spec.seeds.iter().map(|s| s.wrapping_add(opts.seed_offset)).collect();
    let jobs = if opts.deterministic { 1 } else { opts.jobs.max(1) };
    let results = map_jobs(&seeds, jobs, |&seed| -> Result<(SeedOutput, f64)> {
        let start = Instant::now();
        let out = match (spec.recipe.as_str(), spec.space) {
            ("toy-ps-2d-vs-8d", Space::Ambient { h }) => toy_ps(&ctx, seed, h)?,
            ("verify-decomposition", Space::Ambient { h }) => decomposition(&ctx, seed, h)?,
            ("capacity-bottleneck", _) => capacity(&ctx, seed)?,
            ("ladder-rae-svae-pvae-psvae", _) => ladder(&ctx, seed)?,
            ("shortcut-hd", _) => shortcut(&ctx, seed)?,
            ("shift-table", _) => SeedOutput::default(),
            (r, s) => return Err(LabError::spec("space", format!("{} is not valid for {r}", s.label()))),
        };
        Ok((out, start.elapsed().as_secs_f64()))
    });

    let mut outputs = Vec::new();
    let mut runs = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        let (out, secs) = r?;
        runs.push(RunRecord {
            seed: *seed,
            outputs: out.files.clone(),
            wall_clock_seconds: secs,
        });
        outputs.push(out);
    }

    let mut summary = Vec::new();
    match spec.recipe.as_str() {
        "toy-ps-2d-vs-8d" | "ladder-rae-svae-pvae-psvae" => {
            let (a, b): (Vec<_>, Vec<_>) = outputs
                .iter()
                .map(|o| (o.metrics[0].clone(), o.metrics[1].clone()))
                .unzip();
            let cmp: SpaceComparison = compare_spaces(&a, &b)?;
            write_json(&opts.out.join("comparison.json"), &cmp)?;
            summary.push(PathBuf::from("comparison.json"));
            if spec.recipe.starts_with("ladder") {
                let all: Vec<VariantReport> = outputs.iter().flat_map(|o| o.variants.clone()).collect();
                write_json(&opts.out.join("ladder.json"), &all)?;
                summary.push(PathBuf::from("ladder.json"));
            }
        }
        "shift-table" => {
            let table = shift_table()?;
            write_json(&opts.out.join("shift_table.json"), &table)?;
            write_rows_csv(&opts.out.join("shift_table.csv"), &table.latent)?;
            summary.extend([PathBuf::from("shift_table.json"), PathBuf::from("shift_table.csv")]);
        }
        _ => {}
    }

    let manifest = RunManifest::new(spec, ctx.hash.clone(), summary, runs);
    manifest.write(&opts.out)?;
    Ok(manifest)
}
