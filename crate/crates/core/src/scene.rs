//! Synthetic grid-scene dialog task with programmatic ground truth.
//!
//! Each image is an R x R grid of cells; a present cell has a shape and a
//! color. Ten-round dialogs are generated from question templates whose
//! answers are forced by the scene, including pronoun follow-ups ("what
//! color is it") that only resolve through the previous round — so dialog
//! history attention is load-bearing, not decorative. Candidate lists pair
//! the human answer with 99 distractors: template perturbations plus answers
//! drawn from other scenes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    encode_records, tokenize_record, DialogRecord, FeatureMap, JsonRecord, JsonRound, RawRecord,
    RegionFeatures, TruncationLimits, CANDIDATES_PER_ROUND,
};
use crate::error::{Error, Result};
use crate::text::Vocabulary;

pub const SHAPES: [&str; 4] = ["square", "circle", "triangle", "star"];
pub const COLORS: [&str; 4] = ["red", "blue", "green", "yellow"];

/// Attribute dims: shape one-hot, color one-hot, presence, row, col, bias.
pub const FEATURE_BASE_DIMS: usize = 4 + 4 + 1 + 2 + 1;

const NUMBER_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

#[derive(Debug, Clone, Copy)]
pub struct SceneConfig {
    /// Grid side length R (N = R*R regions).
    pub grid: usize,
    /// Region feature dimension; must be at least [`FEATURE_BASE_DIMS`].
    pub d_img: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Scale of the seeded noise filling the non-attribute feature dims.
    pub noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            grid: 4,
            d_img: 32,
            min_objects: 4,
            max_objects: 7,
            noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub present: bool,
    pub shape: usize,
    pub color: usize,
}

/// One synthetic image: an R x R grid of optionally occupied cells.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub grid: usize,
    pub cells: Vec<Cell>,
}

impl SceneSpec {
    pub fn cell_coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.grid, idx % self.grid)
    }

    pub fn count_shape(&self, shape: usize) -> usize {
        self.cells
            .iter()
            .filter(|c| c.present && c.shape == shape)
            .count()
    }

    pub fn has(&self, color: usize, shape: usize) -> bool {
        self.cells
            .iter()
            .any(|c| c.present && c.shape == shape && c.color == color)
    }
}

/// The generating program of one round; ground truth is recomputable from
/// the scene, so the whole dataset is verifiable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RoundProgram {
    /// "what color is the <shape>" — shape occurs exactly once.
    ColorOfUnique { shape: usize, cell: usize },
    /// "what shape is in row <r> column <c>".
    ShapeAt { cell: usize },
    /// "where is it" — pronoun to the previous round's object.
    WhereIsIt { cell: usize },
    /// "what color is it" — pronoun to the previous round's object.
    ColorOfIt { cell: usize },
    /// "what shape is it" — pronoun to the previous round's object.
    ShapeOfIt { cell: usize },
    /// "how many <shape>s are there".
    CountShape { shape: usize },
    /// "is there a <color> <shape>".
    Exists { color: usize, shape: usize },
}

impl RoundProgram {
    /// The cell a following pronoun question would refer to, if any.
    pub fn referent(&self) -> Option<usize> {
        match *self {
            RoundProgram::ColorOfUnique { cell, .. }
            | RoundProgram::ShapeAt { cell }
            | RoundProgram::WhereIsIt { cell }
            | RoundProgram::ColorOfIt { cell }
            | RoundProgram::ShapeOfIt { cell } => Some(cell),
            _ => None,
        }
    }
}

/// Scene plus per-round programs for one record, kept for verification.
#[derive(Debug, Clone)]
pub struct SceneScript {
    pub scene: SceneSpec,
    pub programs: Vec<RoundProgram>,
}

fn words(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

fn location_words(scene: &SceneSpec, cell: usize) -> (String, String) {
    let (r, c) = scene.cell_coords(cell);
    (
        NUMBER_WORDS[r + 1].to_string(),
        NUMBER_WORDS[c + 1].to_string(),
    )
}

/// Question tokens a program renders to.
pub fn expected_question(scene: &SceneSpec, program: &RoundProgram) -> Vec<String> {
    match *program {
        RoundProgram::ColorOfUnique { shape, .. } => {
            words(&["what", "color", "is", "the", SHAPES[shape]])
        }
        RoundProgram::ShapeAt { cell } => {
            let (rw, cw) = location_words(scene, cell);
            vec![
                "what".into(),
                "shape".into(),
                "is".into(),
                "in".into(),
                "row".into(),
                rw,
                "column".into(),
                cw,
            ]
        }
        RoundProgram::WhereIsIt { .. } => words(&["where", "is", "it"]),
        RoundProgram::ColorOfIt { .. } => words(&["what", "color", "is", "it"]),
        RoundProgram::ShapeOfIt { .. } => words(&["what", "shape", "is", "it"]),
        RoundProgram::CountShape { shape } => vec![
            "how".into(),
            "many".into(),
            format!("{}s", SHAPES[shape]),
            "are".into(),
            "there".into(),
        ],
        RoundProgram::Exists { color, shape } => {
            words(&["is", "there", "a", COLORS[color], SHAPES[shape]])
        }
    }
}

/// Ground-truth answer tokens a program renders to.
pub fn expected_answer(scene: &SceneSpec, program: &RoundProgram) -> Vec<String> {
    match *program {
        RoundProgram::ColorOfUnique { cell, .. } | RoundProgram::ColorOfIt { cell } => {
            words(&["it", "is", COLORS[scene.cells[cell].color]])
        }
        RoundProgram::ShapeAt { cell } | RoundProgram::ShapeOfIt { cell } => {
            words(&["it", "is", "a", SHAPES[scene.cells[cell].shape]])
        }
        RoundProgram::WhereIsIt { cell } => {
            let (rw, cw) = location_words(scene, cell);
            vec![
                "it".into(),
                "is".into(),
                "in".into(),
                "row".into(),
                rw,
                "column".into(),
                cw,
            ]
        }
        RoundProgram::CountShape { shape } => count_answer(scene.count_shape(shape)),
        RoundProgram::Exists { color, shape } => {
            if scene.has(color, shape) {
                words(&["yes", "there", "is"])
            } else {
                words(&["no", "there", "is", "not"])
            }
        }
    }
}

fn count_answer(n: usize) -> Vec<String> {
    match n {
        0 => words(&["there", "are", "none"]),
        1 => words(&["there", "is", "one"]),
        n => vec!["there".into(), "are".into(), NUMBER_WORDS[n.min(9)].into()],
    }
}

/// A scene with two guaranteed-unique shapes so reference questions resolve.
fn generate_scene(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> (SceneSpec, [(usize, usize); 2]) {
    let n_cells = cfg.grid * cfg.grid;
    let n_objects = rng.random_range(cfg.min_objects..=cfg.max_objects.min(n_cells));
    let mut slots: Vec<usize> = (0..n_cells).collect();
    slots.shuffle(rng);
    let mut shape_order: Vec<usize> = (0..SHAPES.len()).collect();
    shape_order.shuffle(rng);

    let mut cells = vec![
        Cell {
            present: false,
            shape: 0,
            color: 0
        };
        n_cells
    ];
    let mut unique = [(0usize, 0usize); 2];
    for (j, &slot) in slots.iter().take(n_objects).enumerate() {
        let shape = match j {
            0 | 1 => shape_order[j],
            // The rest draw only from the other two shapes, so the first two
            // stay unique in the scene.
            _ => shape_order[2 + rng.random_range(0..2)],
        };
        let color = rng.random_range(0..COLORS.len());
        cells[slot] = Cell {
            present: true,
            shape,
            color,
        };
        if j < 2 {
            unique[j] = (shape, slot);
        }
    }
    (SceneSpec { grid: cfg.grid, cells }, unique)
}

#[derive(Clone, Copy)]
enum PairKind {
    ColorThenWhere,
    ShapeAtThenColor,
    ColorThenShape,
    CountAndExists,
}

/// Ten rounds of (program, question, answer) for one scene.
fn generate_script(
    scene: &SceneSpec,
    unique: [(usize, usize); 2],
    rng: &mut ChaCha8Rng,
) -> Vec<RoundProgram> {
    use PairKind::*;
    let extra = match rng.random_range(0..4) {
        0 => ColorThenWhere,
        1 => ShapeAtThenColor,
        2 => ColorThenShape,
        _ => CountAndExists,
    };
    let mut kinds = vec![
        ColorThenWhere,
        ShapeAtThenColor,
        ColorThenShape,
        CountAndExists,
        extra,
    ];
    kinds.shuffle(rng);

    let present: Vec<usize> = (0..scene.cells.len())
        .filter(|&i| scene.cells[i].present)
        .collect();
    let mut uo = 0usize;
    let mut programs = Vec::with_capacity(10);
    for kind in kinds {
        match kind {
            ColorThenWhere | ColorThenShape => {
                let (shape, cell) = unique[uo % 2];
                uo += 1;
                programs.push(RoundProgram::ColorOfUnique { shape, cell });
                programs.push(if matches!(kind, ColorThenWhere) {
                    RoundProgram::WhereIsIt { cell }
                } else {
                    RoundProgram::ShapeOfIt { cell }
                });
            }
            ShapeAtThenColor => {
                let cell = present[rng.random_range(0..present.len())];
                programs.push(RoundProgram::ShapeAt { cell });
                programs.push(RoundProgram::ColorOfIt { cell });
            }
            CountAndExists => {
                programs.push(RoundProgram::CountShape {
                    shape: rng.random_range(0..SHAPES.len()),
                });
                programs.push(RoundProgram::Exists {
                    color: rng.random_range(0..COLORS.len()),
                    shape: rng.random_range(0..SHAPES.len()),
                });
            }
        }
    }
    programs
}

/// Deterministic region features: attribute encoding plus seeded noise,
/// quantized to f32 so in-memory values match a file round-trip exactly.
pub fn scene_features(scene: &SceneSpec, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> RegionFeatures {
    let n = scene.cells.len();
    let d = cfg.d_img;
    let denom = (scene.grid.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(n * d);
    for (i, cell) in scene.cells.iter().enumerate() {
        let (r, c) = scene.cell_coords(i);
        let mut f = vec![0.0f64; d];
        if cell.present {
            f[cell.shape] = 1.0;
            f[4 + cell.color] = 1.0;
            f[8] = 1.0;
        }
        f[9] = r as f64 / denom;
        f[10] = c as f64 / denom;
        f[11] = 1.0;
        for v in f.iter_mut().skip(FEATURE_BASE_DIMS) {
            *v = cfg.noise * (2.0 * rng.random::<f64>() - 1.0);
        }
        data.extend(f.into_iter().map(|v| v as f32 as f64));
    }
    RegionFeatures { n, d, data }
}

/// All answer surface forms the templates can produce, for distractor pools.
pub fn template_answer_pool(grid: usize) -> Vec<String> {
    let mut pool = Vec::new();
    for color in COLORS {
        pool.push(format!("it is {color}"));
    }
    for shape in SHAPES {
        pool.push(format!("it is a {shape}"));
    }
    for color in COLORS {
        for shape in SHAPES {
            pool.push(format!("it is a {color} {shape}"));
        }
    }
    for r in 0..grid {
        for c in 0..grid {
            pool.push(format!(
                "it is in row {} column {}",
                NUMBER_WORDS[r + 1],
                NUMBER_WORDS[c + 1]
            ));
        }
    }
    pool.push("there are none".to_string());
    pool.push("there is one".to_string());
    for n in 2..=9 {
        pool.push(format!("there are {}", NUMBER_WORDS[n]));
    }
    pool.push("yes there is".to_string());
    pool.push("no there is not".to_string());
    pool
}

/// Minimum number of template-perturbation distractors per candidate list.
pub const TEMPLATE_DISTRACTORS: usize = 34;

fn build_candidates(
    gt: &str,
    pool: &[String],
    all_answers: &[String],
    rng: &mut ChaCha8Rng,
) -> (Vec<String>, usize) {
    let mut perturbations: Vec<&String> = pool.iter().filter(|p| p.as_str() != gt).collect();
    perturbations.shuffle(rng);
    let mut options: Vec<String> = perturbations
        .into_iter()
        .take(TEMPLATE_DISTRACTORS)
        .cloned()
        .collect();
    while options.len() < CANDIDATES_PER_ROUND - 1 {
        let pick = &all_answers[rng.random_range(0..all_answers.len())];
        if pick != gt {
            options.push(pick.clone());
        }
    }
    options.shuffle(rng);
    let gt_index = rng.random_range(0..CANDIDATES_PER_ROUND);
    options.insert(gt_index, gt.to_string());
    (options, gt_index)
}

/// Generate `count` records with features and their verification scripts.
///
/// Fully deterministic in `(count, seed, cfg, id_prefix)`; record `i` is
/// independent of `count`, and candidate lists depend on the whole answer
/// pool.
pub fn synthesize_raw(
    count: usize,
    seed: u64,
    cfg: &SceneConfig,
    id_prefix: &str,
) -> Result<(Vec<JsonRecord>, FeatureMap, Vec<SceneScript>)> {
    if count == 0 {
        return Err(Error::InvalidArgument {
            op: "synthesize",
            msg: "count must be positive".into(),
        });
    }
    if cfg.d_img < FEATURE_BASE_DIMS {
        return Err(Error::InvalidArgument {
            op: "synthesize",
            msg: format!("d_img must be at least {FEATURE_BASE_DIMS}"),
        });
    }
    if cfg.min_objects < 2 || cfg.min_objects > cfg.max_objects {
        return Err(Error::InvalidArgument {
            op: "synthesize",
            msg: "need 2 <= min_objects <= max_objects".into(),
        });
    }

    // Pass 1: scenes, scripts, features, ground-truth answers.
    let mut scripts = Vec::with_capacity(count);
    let mut features = FeatureMap::new();
    let mut all_answers = Vec::new();
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, i as u64));
        let (scene, unique) = generate_scene(cfg, &mut rng);
        let programs = generate_script(&scene, unique, &mut rng);
        let feat = scene_features(&scene, cfg, &mut rng);
        features.insert(format!("{id_prefix}{i:05}"), feat);
        for p in &programs {
            all_answers.push(expected_answer(&scene, p).join(" "));
        }
        scripts.push(SceneScript { scene, programs });
    }

    // Pass 2: candidate lists and JSON records.
    let pool = template_answer_pool(cfg.grid);
    let mut records = Vec::with_capacity(count);
    for (i, script) in scripts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed ^ 0x00C0_FFEE, i as u64));
        let caption = caption_tokens(&script.scene, &script.programs);
        let mut dialog = Vec::with_capacity(script.programs.len());
        for p in &script.programs {
            let question = expected_question(&script.scene, p).join(" ");
            let answer = expected_answer(&script.scene, p).join(" ");
            let (answer_options, gt_index) =
                build_candidates(&answer, &pool, &all_answers, &mut rng);
            dialog.push(JsonRound {
                question,
                answer,
                answer_options,
                gt_index,
            });
        }
        records.push(JsonRecord {
            image_id: format!("{id_prefix}{i:05}"),
            caption: caption.join(" "),
            dialog,
        });
    }
    Ok((records, features, scripts))
}

fn caption_tokens(scene: &SceneSpec, programs: &[RoundProgram]) -> Vec<String> {
    let n = scene.cells.iter().filter(|c| c.present).count();
    // Mention the first unique object so the caption carries usable content.
    let first_unique = programs.iter().find_map(|p| match *p {
        RoundProgram::ColorOfUnique { cell, .. } => Some(cell),
        _ => None,
    });
    let mut caption = vec![
        "a".to_string(),
        "grid".to_string(),
        "of".to_string(),
        NUMBER_WORDS[n.min(9)].to_string(),
        "shapes".to_string(),
    ];
    if let Some(cell) = first_unique {
        let c = scene.cells[cell];
        caption.extend(words(&[
            "including",
            "a",
            COLORS[c.color],
            SHAPES[c.shape],
        ]));
    }
    caption
}

/// Synthesize, build a vocabulary from the generated corpus, and encode.
pub fn synthesize_dataset(
    count: usize,
    seed: u64,
    cfg: &SceneConfig,
    id_prefix: &str,
    min_count: usize,
) -> Result<(Vec<DialogRecord>, FeatureMap, Vocabulary)> {
    let (json_records, features, _) = synthesize_raw(count, seed, cfg, id_prefix)?;
    let raw: Vec<RawRecord> = json_records
        .iter()
        .enumerate()
        .map(|(i, r)| tokenize_record(i, r, TruncationLimits::default()))
        .collect::<Result<_>>()?;
    let vocab = Vocabulary::build(crate::data::corpus_tokens(&raw), min_count)?;
    let records = encode_records(&raw, &vocab);
    Ok((records, features, vocab))
}

/// Check every round of a generated dataset against its script: questions
/// and answers must re-derive from the scene, and pronoun rounds must refer
/// to the previous round's object.
pub fn verify_scripts(records: &[JsonRecord], scripts: &[SceneScript]) -> Result<()> {
    for (i, (rec, script)) in records.iter().zip(scripts).enumerate() {
        let bad = |msg: String| Error::BadRecord { index: i, msg };
        for (r, (round, program)) in rec.dialog.iter().zip(&script.programs).enumerate() {
            let q = expected_question(&script.scene, program).join(" ");
            let a = expected_answer(&script.scene, program).join(" ");
            if round.question != q {
                return Err(bad(format!("round {r}: question {:?} != {q:?}", round.question)));
            }
            if round.answer != a {
                return Err(bad(format!("round {r}: answer {:?} != {a:?}", round.answer)));
            }
            let is_pronoun = matches!(
                program,
                RoundProgram::WhereIsIt { .. }
                    | RoundProgram::ColorOfIt { .. }
                    | RoundProgram::ShapeOfIt { .. }
            );
            if is_pronoun {
                let prev = script.programs[r - 1].referent();
                if prev != program.referent() {
                    return Err(bad(format!("round {r}: pronoun does not match previous object")));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SceneConfig {
        SceneConfig {
            d_img: 12,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn color_question_forces_it_is_color_answer() {
        let scene = SceneSpec {
            grid: 4,
            cells: {
                let mut cells = vec![
                    Cell {
                        present: false,
                        shape: 0,
                        color: 0
                    };
                    16
                ];
                cells[0] = Cell {
                    present: true,
                    shape: 0, // square
                    color: 0, // red
                };
                cells
            },
        };
        let p = RoundProgram::ColorOfUnique { shape: 0, cell: 0 };
        assert_eq!(
            expected_question(&scene, &p),
            vec!["what", "color", "is", "the", "square"]
        );
        assert_eq!(expected_answer(&scene, &p), vec!["it", "is", "red"]);
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = synthesize_raw(5, 7, &tiny_cfg(), "t").unwrap();
        let b = synthesize_raw(5, 7, &tiny_cfg(), "t").unwrap();
        let ja = serde_json::to_vec(&JsonDatasetWrap(&a.0)).unwrap();
        let jb = serde_json::to_vec(&JsonDatasetWrap(&b.0)).unwrap();
        assert_eq!(ja, jb);
        let fa: Vec<_> = a.1.iter().map(|(id, f)| (id.clone(), f.data.clone())).collect();
        let fb: Vec<_> = b.1.iter().map(|(id, f)| (id.clone(), f.data.clone())).collect();
        assert_eq!(fa, fb);
    }

    #[derive(serde::Serialize)]
    struct JsonDatasetWrap<'a>(&'a Vec<JsonRecord>);

    #[test]
    fn every_ground_truth_is_scene_consistent() {
        let (records, _, scripts) = synthesize_raw(40, 123, &tiny_cfg(), "t").unwrap();
        verify_scripts(&records, &scripts).unwrap();
    }

    #[test]
    fn follow_up_resolves_to_previous_object() {
        let (_, _, scripts) = synthesize_raw(30, 5, &tiny_cfg(), "t").unwrap();
        let mut saw_pronoun = 0;
        for script in &scripts {
            for (r, p) in script.programs.iter().enumerate() {
                if let RoundProgram::ShapeOfIt { cell } = *p {
                    saw_pronoun += 1;
                    assert_eq!(script.programs[r - 1].referent(), Some(cell));
                }
            }
        }
        assert!(saw_pronoun > 0);
    }

    #[test]
    fn candidate_lists_are_valid_and_contain_gt() {
        let (records, _, _) = synthesize_raw(10, 99, &tiny_cfg(), "t").unwrap();
        let pool = template_answer_pool(4);
        for rec in &records {
            for round in &rec.dialog {
                assert_eq!(round.answer_options.len(), CANDIDATES_PER_ROUND);
                assert_eq!(round.answer_options[round.gt_index], round.answer);
                // no distractor duplicates the human answer
                let dup = round
                    .answer_options
                    .iter()
                    .enumerate()
                    .filter(|(i, o)| *i != round.gt_index && o.as_str() == round.answer)
                    .count();
                assert_eq!(dup, 0);
                // enough template perturbations
                let from_pool = round
                    .answer_options
                    .iter()
                    .enumerate()
                    .filter(|(i, o)| *i != round.gt_index && pool.contains(o))
                    .count();
                assert!(from_pool >= TEMPLATE_DISTRACTORS, "only {from_pool} from pool");
            }
        }
    }

    #[test]
    fn synthesized_records_round_trip_through_loader() {
        let (records, features, _) = synthesize_raw(3, 11, &tiny_cfg(), "t").unwrap();
        for (i, r) in records.iter().enumerate() {
            tokenize_record(i, r, TruncationLimits::default()).unwrap();
        }
        assert_eq!(features.len(), 3);
        let f = features.get("t00000").unwrap();
        assert_eq!(f.n, 16);
        assert_eq!(f.d, 12);
    }

    #[test]
    fn vocabulary_covers_template_words() {
        let (_, _, vocab) = synthesize_dataset(50, 3, &tiny_cfg(), "t", 5).unwrap();
        for w in ["it", "is", "red", "square", "there"] {
            assert!(vocab.contains(w), "missing {w}");
        }
    }
}
