use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::missing;
use crate::autodiff::Tensor;
use crate::checkpoint::Checkpoint;
use crate::curriculum::{SchedulePolicy, ScheduleState};
use crate::error::{CheckpointError, Error, Result};
use crate::optim::AdamState;
use crate::recnet::{DiscriminatorParams, GeneratorParams, ModelDims};
use crate::textdata::Vocab;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Updates of either network so far.
    pub iter: u64,
    pub disc_updates: u64,
    pub gen_updates: u64,
    /// Completed outer cycles.
    pub cycles: u64,
    /// Updates already made in the current cycle.
    pub cycle_pos: u64,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub gen: GeneratorParams<f32>,
    pub disc: DiscriminatorParams<f32>,
    pub gen_opt: AdamState<f32>,
    pub disc_opt: AdamState<f32>,
    pub schedule: ScheduleState,
    pub rng: ChaCha8Rng,
    pub counters: Counters,
    pub last_disc_loss: f32,
    pub last_gen_loss: f32,
}

impl PartialEq for TrainerState {
    fn eq(&self, o: &Self) -> bool {
        self.gen == o.gen
            && self.disc == o.disc
            && self.gen_opt == o.gen_opt
            && self.disc_opt == o.disc_opt
            && self.schedule == o.schedule
            && self.rng == o.rng
            && self.counters == o.counters
            && self.last_disc_loss.to_bits() == o.last_disc_loss.to_bits()
            && self.last_gen_loss.to_bits() == o.last_gen_loss.to_bits()
    }
}

impl TrainerState {
    pub fn init(dims: &ModelDims, policy: &SchedulePolicy, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gen = GeneratorParams::init(dims, &mut rng)?;
        let disc = DiscriminatorParams::init(dims, &mut rng)?;
        Ok(TrainerState {
            gen_opt: AdamState::new(gen.named().into_iter().map(|p| p.1)),
            disc_opt: AdamState::new(disc.named().into_iter().map(|p| p.1)),
            gen,
            disc,
            schedule: ScheduleState::new(policy),
            rng,
            counters: Counters::default(),
            last_disc_loss: f32::NAN,
            last_gen_loss: f32::NAN,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        let mut meta = |k: &str, v: String| {
            c.meta.insert(k.to_owned(), v);
        };
        let d = self.gen.dims();
        meta("dims.vocab", d.vocab.to_string());
        meta("dims.embed", d.embed.to_string());
        meta("dims.hidden", d.hidden.to_string());
        meta("dims.noise", d.noise.to_string());
        meta("dims.noise_proj", d.noise_proj.to_string());
        meta("iter", self.counters.iter.to_string());
        meta("disc_updates", self.counters.disc_updates.to_string());
        meta("gen_updates", self.counters.gen_updates.to_string());
        meta("cycles", self.counters.cycles.to_string());
        meta("cycle_pos", self.counters.cycle_pos.to_string());
        meta("schedule.current_cap", self.schedule.current_cap.to_string());
        meta("schedule.global_iter", self.schedule.global_iter.to_string());
        meta("rng.seed", hex::encode(self.rng.get_seed()));
        meta("rng.stream", self.rng.get_stream().to_string());
        meta("rng.word_pos", self.rng.get_word_pos().to_string());
        meta("adam.gen.step", self.gen_opt.step.to_string());
        meta("adam.disc.step", self.disc_opt.step.to_string());
        meta("last_disc_loss", format!("{:08x}", self.last_disc_loss.to_bits()));
        meta("last_gen_loss", format!("{:08x}", self.last_gen_loss.to_bits()));
        let gen = self.gen.named();
        let disc = self.disc.named();
        for (n, t) in gen.iter().chain(&disc) {
            c.tensors.push((n.clone(), (*t).clone()));
        }
        let moments = [(&gen, &self.gen_opt), (&disc, &self.disc_opt)];
        for (names, opt) in moments {
            for ((n, _), (m, v)) in names.iter().zip(opt.m.iter().zip(&opt.v)) {
                c.tensors.push((format!("adam.m.{n}"), m.clone()));
                c.tensors.push((format!("adam.v.{n}"), v.clone()));
            }
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let dims = ModelDims {
            vocab: c.meta_parse("dims.vocab")?,
            embed: c.meta_parse("dims.embed")?,
            hidden: c.meta_parse("dims.hidden")?,
            noise: c.meta_parse("dims.noise")?,
            noise_proj: c.meta_parse("dims.noise_proj")?,
        };
        dims.validate()?;
        let mut gen = GeneratorParams::<f32>::init(&dims, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut disc = DiscriminatorParams::<f32>::zeros(&dims);
        let gen_names: Vec<String> = gen.named().into_iter().map(|p| p.0).collect();
        let disc_names: Vec<String> = disc.named().into_iter().map(|p| p.0).collect();
        fill(c, &gen_names, "", gen.tensors_mut())?;
        fill(c, &disc_names, "", disc.tensors_mut())?;
        let mut gen_opt = AdamState::new(gen.named().into_iter().map(|p| p.1));
        let mut disc_opt = AdamState::new(disc.named().into_iter().map(|p| p.1));
        fill(c, &gen_names, "adam.m.", gen_opt.m.iter_mut().collect())?;
        fill(c, &gen_names, "adam.v.", gen_opt.v.iter_mut().collect())?;
        fill(c, &disc_names, "adam.m.", disc_opt.m.iter_mut().collect())?;
        fill(c, &disc_names, "adam.v.", disc_opt.v.iter_mut().collect())?;
        gen_opt.step = c.meta_parse("adam.gen.step")?;
        disc_opt.step = c.meta_parse("adam.disc.step")?;

        let mut seed = [0u8; 32];
        hex::decode_to_slice(c.meta("rng.seed")?, &mut seed).map_err(|_| corrupt("rng.seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(c.meta_parse("rng.stream")?);
        rng.set_word_pos(c.meta_parse("rng.word_pos")?);
        let bits = |k: &str| -> Result<f32> {
            u32::from_str_radix(c.meta(k)?, 16).map(f32::from_bits).map_err(|_| corrupt(k))
        };
        Ok(TrainerState {
            gen,
            disc,
            gen_opt,
            disc_opt,
            schedule: ScheduleState {
                current_cap: c.meta_parse("schedule.current_cap")?,
                global_iter: c.meta_parse("schedule.global_iter")?,
            },
            rng,
            counters: Counters {
                iter: c.meta_parse("iter")?,
                disc_updates: c.meta_parse("disc_updates")?,
                gen_updates: c.meta_parse("gen_updates")?,
                cycles: c.meta_parse("cycles")?,
                cycle_pos: c.meta_parse("cycle_pos")?,
            },
            last_disc_loss: bits("last_disc_loss")?,
            last_gen_loss: bits("last_gen_loss")?,
        })
    }
}

fn fill(c: &Checkpoint, names: &[String], prefix: &str, slots: Vec<&mut Tensor<f32>>) -> Result<()> {
    for (name, slot) in names.iter().zip(slots) {
        let full = format!("{prefix}{name}");
        let t = c.tensor(&full)?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(CheckpointError::Corrupt(format!(
                "tensor `{full}` has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            ))));
        }
        *slot = t.clone();
    }
    Ok(())
}

fn corrupt(key: &str) -> Error {
    Error::Checkpoint(CheckpointError::Corrupt(format!("bad value for `{key}`")))
}

/// Vocabulary stored as space-separated hexadecimal code points.
pub fn vocab_to_meta(vocab: &Vocab) -> String {
    vocab.chars().iter().map(|&c| format!("{:x}", c as u32)).collect::<Vec<_>>().join(" ")
}

pub fn vocab_from_meta(c: &Checkpoint) -> Result<Vocab> {
    let text = c.meta("vocab").map_err(|_| missing("vocabulary metadata `vocab`"))?;
    let chars = text
        .split_whitespace()
        .map(|h| u32::from_str_radix(h, 16).ok().and_then(char::from_u32))
        .collect::<Option<Vec<char>>>()
        .ok_or_else(|| corrupt("vocab"))?;
    Ok(Vocab::from_chars(chars))
}
