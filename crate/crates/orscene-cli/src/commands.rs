use std::collections::BTreeSet;
use std::path::Path;

use orscene_core::config::ModalityToggles;
use orscene_core::io::{
    self, read_cc, read_checkpoint, read_manifest, write_checkpoint, write_json,
    write_manifest, write_report, write_triplets, AblationFile, AblationRow, FramesFile,
    ManifestFile, TrainLogFile,
};
use orscene_core::synth::generate_episode;
use orscene_core::tasks::{detect_breach_in_frame, reduce_to_scene_graph};
use orscene_core::train::{evaluate_all, evaluate_split, train_model, Dataset, Model};
use orscene_core::{Episode, RunConfig};

use crate::CliError;

pub fn generate(run: &RunConfig, single_thread: bool) -> Result<(), CliError> {
    let count = run.data.episodes;
    let episodes = generate_episodes(run, count, single_thread)?;

    let dir = Path::new(&run.paths.data_dir);
    let mut entries = Vec::with_capacity(episodes.len());
    for episode in &episodes {
        entries.push(io::write_episode(dir, episode)?);
    }
    let split = orscene_core::synth::split_dataset(count, run.data.split, run.synth.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let manifest = ManifestFile {
        format_version: orscene_core::config::FORMAT_VERSION,
        seed: run.synth.seed,
        window_t: run.build.window_t,
        episodes: entries,
        split: split.clone(),
        action_names: run.synth.actions.clone(),
        phase_names: run.synth.phase_names(),
        predicate_names: run.synth.predicate_names(),
    };
    write_manifest(dir, &manifest)?;
    println!(
        "generated {} episode(s) into {} (split {}/{}/{})",
        count,
        run.paths.data_dir,
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn generate_episodes(
    run: &RunConfig,
    count: usize,
    single_thread: bool,
) -> Result<Vec<Episode>, CliError> {
    let threads = if single_thread {
        1
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    };
    if threads <= 1 || count < 2 {
        return (0..count)
            .map(|i| {
                generate_episode(&run.synth, &run.build, i as u64)
                    .map_err(|e| CliError::Validation(e.to_string()))
            })
            .collect();
    }
    let mut slots: Vec<Option<Result<Episode, String>>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (worker, chunk) in slots.chunks_mut(count.div_ceil(threads)).enumerate() {
            let base = worker * count.div_ceil(threads);
            scope.spawn(move || {
                for (offset, slot) in chunk.iter_mut().enumerate() {
                    let index = (base + offset) as u64;
                    *slot = Some(
                        generate_episode(&run.synth, &run.build, index)
                            .map_err(|e| e.to_string()),
                    );
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("worker filled slot").map_err(CliError::Validation))
        .collect()
}

fn load_dataset(run: &RunConfig) -> Result<Dataset, CliError> {
    let dir = Path::new(&run.paths.data_dir);
    if !dir.join("manifest.json").exists() {
        return Err(CliError::Io(format!(
            "dataset missing: {} has no manifest.json (run `orscene generate` first)",
            run.paths.data_dir
        )));
    }
    let manifest = read_manifest(dir)?;
    let mut episodes = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        episodes.push(io::read_episode(dir, entry)?);
    }
    Ok(Dataset {
        episodes,
        split: manifest.split,
    })
}

pub fn train(run: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(run)?;
    let outcome = train_model(run, &dataset, |entry| {
        if let Some(val) = &entry.val {
            eprintln!(
                "step {:>5}  loss {:.4}  val action {:.3} phase {:.3} relations {:.3}",
                entry.step, entry.train_loss, val.action_f1, val.phase_f1, val.relation_f1
            );
        }
    })?;

    let mut best_store = outcome.store.clone();
    best_store
        .restore(&outcome.best_snapshot)
        .map_err(CliError::Validation)?;
    let checkpoint = outcome.model.checkpoint(&best_store);
    write_checkpoint(Path::new(&run.paths.checkpoint), &checkpoint)?;
    let log = TrainLogFile {
        format_version: orscene_core::config::FORMAT_VERSION,
        steps_run: outcome.steps_run,
        best_val: outcome.best_scores,
        entries: outcome.log,
    };
    write_json(Path::new(&run.paths.train_log), &log, true)?;

    match outcome.best_scores {
        Some(best) => println!(
            "trained {} step(s); best val macro-F1: action {:.3}, phase {:.3}, relations {:.3}",
            outcome.steps_run, best.action_f1, best.phase_f1, best.relation_f1
        ),
        None => println!("trained {} step(s); no validation windows", outcome.steps_run),
    }
    println!("checkpoint: {}", run.paths.checkpoint);
    Ok(())
}

pub fn eval(
    run: &RunConfig,
    checkpoint: Option<&Path>,
    export_triplets: bool,
) -> Result<(), CliError> {
    let dataset = load_dataset(run)?;
    let checkpoint_path = checkpoint.unwrap_or_else(|| Path::new(&run.paths.checkpoint));
    let checkpoint = read_checkpoint(checkpoint_path)?;
    let (model, store) = Model::from_checkpoint(run, &checkpoint)?;

    let report = evaluate_all(&model, &store, &dataset, run, None)?;
    write_report(Path::new(&run.paths.report), &report)?;
    for split in &report.splits {
        println!(
            "split {:>5}: next_action {:.3}  robot_phase {:.3}  relations {:.3}  breach {:.3}  ({} windows)",
            split.split,
            split.next_action.macro_f1,
            split.robot_phase.macro_f1,
            split.relations.macro_f1,
            split.breach.macro_f1,
            split.windows
        );
    }
    println!("report: {}", run.paths.report);

    if export_triplets {
        let triplets = reduce_split(run, &model, &store, &dataset, &dataset.split.test.clone())?;
        write_triplets(Path::new(&run.paths.triplets), &triplets)?;
        println!("triplets: {} ({} unique)", run.paths.triplets, triplets.len());
    }
    Ok(())
}

fn reduce_split(
    run: &RunConfig,
    model: &Model,
    store: &orscene_core::ParamStore,
    dataset: &Dataset,
    episode_indices: &[usize],
) -> Result<BTreeSet<String>, CliError> {
    let window_t = run.build.window_t;
    let mut out = BTreeSet::new();
    for &(e, start) in &dataset.windows(episode_indices, window_t) {
        let frames = &dataset.episodes[e].frames[start..start + window_t];
        let frozen = model.build_frozen_window(frames, store)?;
        let mut tape = orscene_core::Tape::new();
        let pass = model
            .net
            .forward(&frozen.complex, &mut tape, store)
            .map_err(orscene_core::train::TrainError::from)?;
        let final_features = tape.value(pass.final_state()).clone();
        let triplets = reduce_to_scene_graph(
            &frozen,
            &final_features,
            &model.heads,
            store,
            &model.predicate_names,
        )
        .map_err(orscene_core::train::TrainError::from)?;
        out.extend(triplets);
    }
    Ok(out)
}

pub fn inspect(cc_path: &Path) -> Result<(), CliError> {
    let file = read_cc(cc_path)?;
    let (complex, mut violations) = file.to_complex();
    violations.extend(complex.validate());

    println!("cells: {}", complex.len());
    let max_rank = complex.max_rank();
    let rank_counts: Vec<String> = (0..=max_rank)
        .map(|r| complex.rank_members(r).len().to_string())
        .collect();
    println!("ranks: {}", rank_counts.join("/"));
    let mut kind_counts: std::collections::BTreeMap<String, usize> = Default::default();
    for cell in complex.cells() {
        *kind_counts
            .entry(format!("{:?}", cell.kind).to_lowercase())
            .or_default() += 1;
    }
    let kinds: Vec<String> = kind_counts
        .iter()
        .map(|(k, n)| format!("{} {}", k, n))
        .collect();
    println!("kinds: {}", kinds.join(", "));
    println!("incidence: {} pair(s)", complex.incidence_len());
    if !file.meta.timestamps.is_empty() {
        println!(
            "frames: {} (t = {} .. {})",
            file.meta.timestamps.len(),
            file.meta.timestamps.first().unwrap(),
            file.meta.timestamps.last().unwrap()
        );
    }
    if !file.meta.entities.is_empty() {
        let unique: BTreeSet<_> = file.meta.entities.iter().map(|e| e.entity_id).collect();
        println!("entities: {} record(s), {} unique", file.meta.entities.len(), unique.len());
    }
    if violations.is_empty() {
        println!("valid");
        Ok(())
    } else {
        for v in &violations {
            println!("violation: {}", v);
        }
        Err(CliError::Validation(format!(
            "{} violation(s) found",
            violations.len()
        )))
    }
}

pub fn ablate(run: &RunConfig, steps: Option<usize>) -> Result<(), CliError> {
    let dataset = load_dataset(run)?;
    let mut rows = Vec::new();
    println!("objects skeletons visual robot_logs audio temporal | next_action robot_phase");
    for (name, toggles) in ModalityToggles::ablation_rows() {
        let mut row_run = run.clone();
        row_run.modality_toggles = toggles;
        if let Some(steps) = steps {
            row_run.train.steps = steps;
        }
        let outcome = train_model(&row_run, &dataset, |_| {})?;
        let mut best_store = outcome.store.clone();
        best_store
            .restore(&outcome.best_snapshot)
            .map_err(CliError::Validation)?;
        let report = evaluate_split(
            &outcome.model,
            &best_store,
            &dataset,
            "test",
            &dataset.split.test,
            &row_run,
            Some(row_run.train.eval_window_cap),
        )?;
        let mark = |on: bool| if on { "x" } else { "-" };
        println!(
            "{:^7} {:^9} {:^6} {:^10} {:^5} {:^8} | {:>11.3} {:>11.3}   ({})",
            mark(toggles.objects),
            mark(toggles.skeletons),
            mark(toggles.visual),
            mark(toggles.robot_logs),
            mark(toggles.audio),
            mark(toggles.temporal),
            report.next_action.macro_f1,
            report.robot_phase.macro_f1,
            name
        );
        rows.push(AblationRow {
            name,
            toggles,
            next_action_f1: report.next_action.macro_f1,
            robot_phase_f1: report.robot_phase.macro_f1,
        });
    }
    let monotone = |pick: fn(&AblationRow) -> f64| rows.windows(2).all(|w| pick(&w[1]) >= pick(&w[0]));
    let table = AblationFile {
        format_version: orscene_core::config::FORMAT_VERSION,
        next_action_monotone: monotone(|r| r.next_action_f1),
        robot_phase_monotone: monotone(|r| r.robot_phase_f1),
        rows,
    };
    println!(
        "trend: next_action monotone = {}, robot_phase monotone = {}",
        table.next_action_monotone, table.robot_phase_monotone
    );
    let path = Path::new(&run.paths.report)
        .parent()
        .map(|p| p.join("ablation.json"))
        .unwrap_or_else(|| "ablation.json".into());
    write_json(&path, &table, true)?;
    println!("table: {}", path.display());
    Ok(())
}

pub fn reduce(
    run: &RunConfig,
    checkpoint: Option<&Path>,
    cc: Option<&Path>,
) -> Result<(), CliError> {
    let checkpoint_path = checkpoint.unwrap_or_else(|| Path::new(&run.paths.checkpoint));
    let checkpoint = read_checkpoint(checkpoint_path)?;
    let (model, store) = Model::from_checkpoint(run, &checkpoint)?;

    let triplets = if let Some(cc_path) = cc {
        let file = read_cc(cc_path)?;
        let window = file.to_window()?;
        let frozen = window
            .freeze()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let mut tape = orscene_core::Tape::new();
        let pass = model
            .net
            .forward(&frozen.complex, &mut tape, &store)
            .map_err(orscene_core::train::TrainError::from)?;
        let final_features = tape.value(pass.final_state()).clone();
        reduce_to_scene_graph(
            &frozen,
            &final_features,
            &model.heads,
            &store,
            &model.predicate_names,
        )
        .map_err(orscene_core::train::TrainError::from)?
    } else {
        let dataset = load_dataset(run)?;
        reduce_split(run, &model, &store, &dataset, &dataset.split.test.clone())?
    };
    write_triplets(Path::new(&run.paths.triplets), &triplets)?;
    println!("{} triplet(s) -> {}", triplets.len(), run.paths.triplets);
    Ok(())
}

pub fn breach_check(run: &RunConfig, frames: Option<&Path>) -> Result<(), CliError> {
    let mut checked = 0usize;
    let mut flagged = 0usize;
    let mut report_frame = |tag: &str, index: usize, frame: &orscene_core::SceneFrame| {
        let report = detect_breach_in_frame(frame, &run.build);
        checked += 1;
        if report.breach {
            flagged += 1;
            let label = |id: orscene_core::EntityId| {
                frame
                    .humans
                    .iter()
                    .find(|h| h.entity_id == id)
                    .map(|h| h.role.label().to_string())
                    .unwrap_or_else(|| format!("entity_{}", id.0))
            };
            let labels: Vec<String> = report
                .pairs
                .iter()
                .map(|(u, v)| format!("({}, {})", label(*u), label(*v)))
                .collect();
            println!("{tag} frame {index}: BREACH {}", labels.join(" "));
        }
    };

    if let Some(path) = frames {
        let file: FramesFile = io::read_json(path)?;
        for (i, frame) in file.frames.iter().enumerate() {
            report_frame("", i, frame);
        }
    } else {
        let dataset = load_dataset(run)?;
        for episode in &dataset.episodes {
            for (i, frame) in episode.frames.iter().enumerate() {
                report_frame(&format!("episode {}", episode.index), i, frame);
            }
        }
    }
    println!("checked {} frame(s), {} with breaches", checked, flagged);
    Ok(())
}
