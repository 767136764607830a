//! Architecture hyper-parameters and the closed-form bookkeeping derived from
//! them: channel plans, dilation schedules, receptive field, parameter count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Softmax over mutually exclusive classes.
    MultiClass,
    /// Independent sigmoid per label (phenotyping-style tasks).
    MultiLabel,
}

/// How the dilation of each block's main convolution is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DilationMode {
    /// `d = 2^l` for block index `l`, reset to 1 at each stage entry.
    ExponentialPerStage,
    /// The same dilation everywhere.
    Fixed(usize),
}

/// Architecture hyper-parameters.
///
/// Serializes to/from JSON with exactly these snake_case field names;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdxConfig {
    /// Input channels (1 for single-lead ECG, 22 for EEG montages, feature
    /// count for binned EHR sequences).
    pub in_channels: usize,
    pub num_classes: usize,
    pub head: Head,
    pub stages: usize,
    pub blocks_per_stage: usize,
    /// Channels each block appends to the running feature map.
    pub growth_rate: usize,
    /// Tap count of each block's main convolution.
    pub kernel_size: usize,
    /// Bottleneck output = `bottleneck_factor * growth_rate` channels.
    pub bottleneck_factor: usize,
    /// Transition channel compression in `(0, 1]`.
    pub compression: f64,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub dilation_mode: DilationMode,
}

impl DdxConfig {
    /// Engineering defaults used by the CLI.
    pub fn default_for(in_channels: usize, num_classes: usize, head: Head) -> Self {
        DdxConfig {
            in_channels,
            num_classes,
            head,
            stages: 3,
            blocks_per_stage: 4,
            growth_rate: 12,
            kernel_size: 3,
            bottleneck_factor: 4,
            compression: 0.5,
            stem_channels: 32,
            stem_kernel: 7,
            dilation_mode: DilationMode::ExponentialPerStage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("in_channels", self.in_channels),
            ("stages", self.stages),
            ("blocks_per_stage", self.blocks_per_stage),
            ("growth_rate", self.growth_rate),
            ("kernel_size", self.kernel_size),
            ("bottleneck_factor", self.bottleneck_factor),
            ("stem_channels", self.stem_channels),
            ("stem_kernel", self.stem_kernel),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::Config(format!(
                "compression must be in (0, 1], got {}",
                self.compression
            )));
        }
        match self.head {
            Head::MultiClass if self.num_classes < 2 => {
                return Err(Error::Config(
                    "multi_class head requires num_classes >= 2".into(),
                ))
            }
            Head::MultiLabel if self.num_classes < 1 => {
                return Err(Error::Config(
                    "multi_label head requires num_classes >= 1".into(),
                ))
            }
            _ => {}
        }
        if let DilationMode::Fixed(d) = self.dilation_mode {
            if d == 0 {
                return Err(Error::Config("fixed dilation must be >= 1".into()));
            }
        }
        if self.blocks_per_stage > 32 {
            return Err(Error::Config(
                "blocks_per_stage > 32 overflows the exponential dilation schedule".into(),
            ));
        }
        // Reject configs whose transitions would compress below one channel.
        for (s, &entry) in self.stage_entry_channels()?.iter().enumerate() {
            if entry == 0 {
                return Err(Error::Config(format!(
                    "compression {} leaves no channels entering stage {s}",
                    self.compression
                )));
            }
        }
        Ok(())
    }

    /// Dilation of each block's main convolution, per stage.
    pub fn dilation_schedule(&self) -> Vec<Vec<usize>> {
        (0..self.stages)
            .map(|_| {
                (0..self.blocks_per_stage)
                    .map(|l| match self.dilation_mode {
                        DilationMode::ExponentialPerStage => 1usize << l,
                        DilationMode::Fixed(d) => d,
                    })
                    .collect()
            })
            .collect()
    }

    /// Channels entering each stage. Stage 0 starts at `stem_channels`; each
    /// later stage starts at `floor(compression * exit_of_previous)`.
    pub fn stage_entry_channels(&self) -> Result<Vec<usize>> {
        let mut entries = Vec::with_capacity(self.stages);
        let mut c = self.stem_channels;
        for _ in 0..self.stages {
            entries.push(c);
            let exit = c + self.blocks_per_stage * self.growth_rate;
            c = (self.compression * exit as f64).floor() as usize;
        }
        Ok(entries)
    }

    /// Channels of the feature map after the final stage (head input width).
    pub fn final_channels(&self) -> Result<usize> {
        let entries = self.stage_entry_channels()?;
        Ok(entries[self.stages - 1] + self.blocks_per_stage * self.growth_rate)
    }

    /// Shortest input the forward pass accepts (every transition pool must
    /// see at least one full window).
    pub fn min_input_len(&self) -> usize {
        1 << (self.stages - 1)
    }

    /// Number of trailing input samples that can influence the last position
    /// of the final feature map.
    pub fn receptive_field(&self) -> usize {
        let schedule = self.dilation_schedule();
        let mut rf = 1usize;
        let mut stride = 1usize;
        rf += (self.stem_kernel - 1) * stride;
        for (s, dilations) in schedule.iter().enumerate() {
            for &d in dilations {
                // Bottleneck convs are 1x1 and add nothing.
                rf += stride * (self.kernel_size - 1) * d;
            }
            if s < self.stages - 1 {
                rf += stride; // pooling window 2 extends the span by one
                stride *= 2;
            }
        }
        rf
    }

    /// Closed-form count of all weights, biases, gammas and betas.
    pub fn param_count(&self) -> usize {
        self.parameter_specs().iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Ordered parameter layout: names, shapes, and initialization rules.
    /// This single plan drives building, counting, and checkpoint validation.
    pub fn parameter_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let k = self.growth_rate;
        let h = self.bottleneck_factor * k;
        let push_conv = |specs: &mut Vec<ParamSpec>, name: &str, co: usize, ci: usize, kk: usize| {
            specs.push(ParamSpec::conv(format!("{name}.w"), co, ci, kk));
            specs.push(ParamSpec::bias(format!("{name}.b"), co));
        };
        let push_bn = |specs: &mut Vec<ParamSpec>, name: &str, c: usize| {
            specs.push(ParamSpec::gamma(format!("{name}.gamma"), c));
            specs.push(ParamSpec::bias(format!("{name}.beta"), c));
        };

        push_conv(&mut specs, "stem.conv", self.stem_channels, self.in_channels, self.stem_kernel);
        let mut c = self.stem_channels;
        for s in 0..self.stages {
            for l in 0..self.blocks_per_stage {
                let prefix = format!("stage{s}.block{l}");
                push_bn(&mut specs, &format!("{prefix}.bn1"), c);
                push_conv(&mut specs, &format!("{prefix}.bottleneck"), h, c, 1);
                push_bn(&mut specs, &format!("{prefix}.bn2"), h);
                push_conv(&mut specs, &format!("{prefix}.conv"), k, h, self.kernel_size);
                c += k;
            }
            if s < self.stages - 1 {
                let prefix = format!("transition{s}");
                let compressed = (self.compression * c as f64).floor() as usize;
                push_bn(&mut specs, &format!("{prefix}.bn"), c);
                push_conv(&mut specs, &format!("{prefix}.conv"), compressed, c, 1);
                c = compressed;
            }
        }
        push_bn(&mut specs, "head.bn", c);
        specs.push(ParamSpec::linear("head.linear.w".into(), self.num_classes, c));
        specs.push(ParamSpec::bias("head.linear.b".into(), self.num_classes));
        specs
    }

    /// Normalization sites in forward order: `(name, channels)`.
    pub fn norm_sites(&self) -> Vec<(String, usize)> {
        let mut sites = Vec::new();
        let k = self.growth_rate;
        let h = self.bottleneck_factor * k;
        let mut c = self.stem_channels;
        for s in 0..self.stages {
            for l in 0..self.blocks_per_stage {
                sites.push((format!("stage{s}.block{l}.bn1"), c));
                sites.push((format!("stage{s}.block{l}.bn2"), h));
                c += k;
            }
            if s < self.stages - 1 {
                sites.push((format!("transition{s}.bn"), c));
                c = (self.compression * c as f64).floor() as usize;
            }
        }
        sites.push(("head.bn".into(), c));
        sites
    }
}

/// How a parameter is filled at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-normal with `std = sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Zero,
    One,
}

/// One entry of the ordered parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn conv(name: String, co: usize, ci: usize, k: usize) -> Self {
        ParamSpec { name, shape: vec![co, ci, k], init: Init::HeNormal { fan_in: ci * k } }
    }

    fn linear(name: String, o: usize, f: usize) -> Self {
        ParamSpec { name, shape: vec![o, f], init: Init::HeNormal { fan_in: f } }
    }

    fn bias(name: String, n: usize) -> Self {
        ParamSpec { name, shape: vec![n], init: Init::Zero }
    }

    fn gamma(name: String, n: usize) -> Self {
        ParamSpec { name, shape: vec![n], init: Init::One }
    }
}
