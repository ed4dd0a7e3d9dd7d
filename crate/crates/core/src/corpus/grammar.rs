//! Smart-home intent grammar. It realises frames as utterances and doubles as
//! the exact NLU annotator used for semantic matching of model output.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Utterance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intent {
    TurnOn,
    TurnOff,
    SetBrightness,
    SetColor,
    SetTemperature,
}

impl Intent {
    pub const ALL: [Intent; 5] = [
        Intent::TurnOn,
        Intent::TurnOff,
        Intent::SetBrightness,
        Intent::SetColor,
        Intent::SetTemperature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::TurnOn => "TurnOn",
            Intent::TurnOff => "TurnOff",
            Intent::SetBrightness => "SetBrightness",
            Intent::SetColor => "SetColor",
            Intent::SetTemperature => "SetTemperature",
        }
    }

    pub fn from_name(s: &str) -> Option<Intent> {
        Intent::ALL.into_iter().find(|i| i.as_str() == s)
    }

    pub fn takes_value(self) -> bool {
        !matches!(self, Intent::TurnOn | Intent::TurnOff)
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Light,
    Appliance,
    Thermostat,
}

impl DeviceKind {
    pub fn supports(self, intent: Intent) -> bool {
        match intent {
            Intent::TurnOn | Intent::TurnOff => true,
            Intent::SetBrightness | Intent::SetColor => self == DeviceKind::Light,
            Intent::SetTemperature => self == DeviceKind::Thermostat,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    pub kind: DeviceKind,
}

/// Intent plus slot values; the unit of semantic identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Frame {
    pub intent: Intent,
    pub device: String,
    pub value: Option<String>,
}

impl Frame {
    pub fn slots(&self) -> BTreeMap<String, String> {
        let mut s = BTreeMap::new();
        s.insert("device".to_string(), self.device.clone());
        if let Some(v) = &self.value {
            s.insert("value".to_string(), v.clone());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarConfig {
    pub devices: Vec<DeviceSpec>,
    /// Carrier templates per intent with `{device}` and `{value}` placeholders.
    pub templates: BTreeMap<Intent, Vec<String>>,
    pub colors: Vec<String>,
    pub brightness: Vec<String>,
    pub temperatures: Vec<String>,
    /// Word-level acoustic confusions used to corrupt hypotheses.
    pub confusions: BTreeMap<String, Vec<String>>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for GrammarConfig {
    fn default() -> Self {
        let light = |n: &str| DeviceSpec {
            name: n.into(),
            kind: DeviceKind::Light,
        };
        let appliance = |n: &str| DeviceSpec {
            name: n.into(),
            kind: DeviceKind::Appliance,
        };
        let thermo = |n: &str| DeviceSpec {
            name: n.into(),
            kind: DeviceKind::Thermostat,
        };
        let devices = vec![
            light("laundry room"),
            light("bedroom"),
            light("bathroom"),
            light("kitchen"),
            light("living room"),
            light("hallway"),
            light("porch"),
            light("office"),
            light("basement"),
            light("dining room"),
            light("nursery"),
            light("desk lamp"),
            appliance("fan"),
            appliance("tv"),
            appliance("coffee maker"),
            appliance("heater"),
            appliance("radio"),
            appliance("garage door"),
            thermo("thermostat"),
            thermo("air conditioner"),
        ];
        let mut templates = BTreeMap::new();
        templates.insert(
            Intent::TurnOn,
            strings(&[
                "turn on {device}",
                "turn on the {device}",
                "switch on the {device}",
                "{device} on",
                "please turn on the {device}",
                "can you turn on {device}",
            ]),
        );
        templates.insert(
            Intent::TurnOff,
            strings(&[
                "turn off {device}",
                "turn off the {device}",
                "switch off the {device}",
                "{device} off",
                "please turn off the {device}",
                "can you turn off {device}",
            ]),
        );
        templates.insert(
            Intent::SetBrightness,
            strings(&[
                "set the {device} to {value} percent",
                "dim the {device} to {value} percent",
                "set {device} brightness to {value} percent",
            ]),
        );
        templates.insert(
            Intent::SetColor,
            strings(&[
                "set the {device} to {value}",
                "make the {device} {value}",
                "change the {device} to {value}",
                "turn the {device} {value}",
            ]),
        );
        templates.insert(
            Intent::SetTemperature,
            strings(&[
                "set the {device} to {value} degrees",
                "set {device} to {value}",
                "change the {device} to {value} degrees",
            ]),
        );
        let mut confusions = BTreeMap::new();
        for (w, cs) in [
            ("laundry", &["launch", "landry"][..]),
            ("bedroom", &["bathroom"]),
            ("bathroom", &["bedroom"]),
            ("kitchen", &["kitten", "chicken"]),
            ("living", &["leaving"]),
            ("hallway", &["holloway"]),
            ("porch", &["torch"]),
            ("office", &["offers"]),
            ("basement", &["casement"]),
            ("dining", &["dying"]),
            ("nursery", &["nursing"]),
            ("desk", &["disk"]),
            ("lamp", &["lamb"]),
            ("fan", &["van", "fun"]),
            ("tv", &["tea"]),
            ("coffee", &["toffee"]),
            ("heater", &["eater"]),
            ("radio", &["rodeo"]),
            ("garage", &["garbage"]),
            ("thermostat", &["thermos"]),
            ("air", &["hair"]),
            ("white", &["wide", "right"]),
            ("yellow", &["hello"]),
            ("red", &["bread"]),
            ("blue", &["blew"]),
            ("green", &["screen"]),
            ("purple", &["people"]),
            ("orange", &["arrange"]),
            ("pink", &["ink"]),
            ("on", &["in"]),
            ("off", &["of"]),
            ("percent", &["present"]),
            ("degrees", &["decrees"]),
            ("room", &["broom"]),
        ] {
            confusions.insert(w.to_string(), strings(cs));
        }
        Self {
            devices,
            templates,
            colors: strings(&["white", "yellow", "red", "blue", "green", "purple", "orange", "pink"]),
            brightness: strings(&["10", "20", "30", "40", "50", "60", "70", "80", "90", "100"]),
            temperatures: strings(&["62", "64", "66", "68", "70", "72", "74", "76"]),
            confusions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Word(String),
    Device,
    Value,
}

/// Compiled grammar.
#[derive(Clone, Debug)]
pub struct Grammar {
    cfg: GrammarConfig,
    templates: BTreeMap<Intent, Vec<Vec<Piece>>>,
    device_tokens: Vec<Vec<String>>,
}

impl Grammar {
    pub fn new(cfg: GrammarConfig) -> Result<Self, CorpusError> {
        if cfg.devices.is_empty() {
            return Err(CorpusError::Config("empty device catalog".into()));
        }
        let mut templates = BTreeMap::new();
        for intent in Intent::ALL {
            let ts = cfg.templates.get(&intent).cloned().unwrap_or_default();
            let supported = cfg.devices.iter().any(|d| d.kind.supports(intent));
            if ts.is_empty() && supported {
                return Err(CorpusError::Config(format!("no templates for {intent}")));
            }
            let compiled: Vec<Vec<Piece>> = ts
                .iter()
                .map(|t| {
                    t.split_whitespace()
                        .map(|w| match w {
                            "{device}" => Piece::Device,
                            "{value}" => Piece::Value,
                            _ => Piece::Word(w.to_string()),
                        })
                        .collect()
                })
                .collect();
            for t in &compiled {
                let has_dev = t.contains(&Piece::Device);
                let has_val = t.contains(&Piece::Value);
                if !has_dev || has_val != intent.takes_value() {
                    return Err(CorpusError::Config(format!(
                        "template for {intent} has wrong placeholders"
                    )));
                }
            }
            templates.insert(intent, compiled);
        }
        for (name, vals) in [
            ("colors", &cfg.colors),
            ("brightness", &cfg.brightness),
            ("temperatures", &cfg.temperatures),
        ] {
            if vals.is_empty() {
                return Err(CorpusError::Config(format!("empty {name} list")));
            }
        }
        let device_tokens = cfg
            .devices
            .iter()
            .map(|d| super::tokens(&d.name))
            .collect::<Vec<_>>();
        if device_tokens.iter().any(Vec::is_empty) {
            return Err(CorpusError::Config("empty device name".into()));
        }
        Ok(Self {
            cfg,
            templates,
            device_tokens,
        })
    }

    pub fn config(&self) -> &GrammarConfig {
        &self.cfg
    }

    pub fn devices(&self) -> &[DeviceSpec] {
        &self.cfg.devices
    }

    pub fn device(&self, name: &str) -> Option<&DeviceSpec> {
        self.cfg.devices.iter().find(|d| d.name == name)
    }

    pub fn num_templates(&self, intent: Intent) -> usize {
        self.templates.get(&intent).map_or(0, Vec::len)
    }

    pub fn values(&self, intent: Intent) -> &[String] {
        match intent {
            Intent::TurnOn | Intent::TurnOff => &[],
            Intent::SetBrightness => &self.cfg.brightness,
            Intent::SetColor => &self.cfg.colors,
            Intent::SetTemperature => &self.cfg.temperatures,
        }
    }

    pub fn confusions(&self, word: &str) -> &[String] {
        self.cfg.confusions.get(word).map_or(&[], Vec::as_slice)
    }

    /// Every frame a device supports.
    pub fn frames_for(&self, device: &DeviceSpec) -> Vec<Frame> {
        let mut out = Vec::new();
        for intent in Intent::ALL {
            if !device.kind.supports(intent) {
                continue;
            }
            if intent.takes_value() {
                for v in self.values(intent) {
                    out.push(Frame {
                        intent,
                        device: device.name.clone(),
                        value: Some(v.clone()),
                    });
                }
            } else {
                out.push(Frame {
                    intent,
                    device: device.name.clone(),
                    value: None,
                });
            }
        }
        out
    }

    /// Realises `frame` with template `template` (index modulo the template count).
    pub fn realize(&self, frame: &Frame, template: usize) -> Utterance {
        let ts = &self.templates[&frame.intent];
        let t = &ts[template % ts.len()];
        let mut tokens = Vec::new();
        for p in t {
            match p {
                Piece::Word(w) => tokens.push(w.clone()),
                Piece::Device => tokens.extend(super::tokens(&frame.device)),
                Piece::Value => tokens.extend(super::tokens(frame.value.as_deref().unwrap_or(""))),
            }
        }
        Utterance {
            tokens,
            intent: frame.intent.as_str().to_string(),
            slots: frame.slots(),
        }
    }

    /// Annotates a token sequence, or `None` when no template parses it.
    pub fn parse(&self, tokens: &[String]) -> Option<Utterance> {
        let frame = self.parse_frame(tokens)?;
        Some(Utterance {
            tokens: tokens.to_vec(),
            intent: frame.intent.as_str().to_string(),
            slots: frame.slots(),
        })
    }

    pub fn parse_frame(&self, tokens: &[String]) -> Option<Frame> {
        for (intent, ts) in &self.templates {
            for t in ts {
                if let Some(f) = self.match_template(*intent, t, tokens) {
                    return Some(f);
                }
            }
        }
        None
    }

    fn match_template(&self, intent: Intent, t: &[Piece], tokens: &[String]) -> Option<Frame> {
        let mut device = None;
        let mut value = None;
        if self.match_from(intent, t, tokens, &mut device, &mut value) {
            let device: usize = device?;
            let spec = &self.cfg.devices[device];
            if !spec.kind.supports(intent) {
                return None;
            }
            Some(Frame {
                intent,
                device: spec.name.clone(),
                value,
            })
        } else {
            None
        }
    }

    fn match_from(
        &self,
        intent: Intent,
        t: &[Piece],
        tokens: &[String],
        device: &mut Option<usize>,
        value: &mut Option<String>,
    ) -> bool {
        let Some((first, rest)) = t.split_first() else {
            return tokens.is_empty();
        };
        match first {
            Piece::Word(w) => {
                tokens.first() == Some(w) && self.match_from(intent, rest, &tokens[1..], device, value)
            }
            Piece::Value => match tokens.first() {
                Some(tok) if self.values(intent).contains(tok) => {
                    let ok = self.match_from(intent, rest, &tokens[1..], device, value);
                    if ok {
                        *value = Some(tok.clone());
                    }
                    ok
                }
                _ => false,
            },
            Piece::Device => {
                for (i, dt) in self.device_tokens.iter().enumerate() {
                    if tokens.len() >= dt.len()
                        && tokens[..dt.len()] == dt[..]
                        && self.match_from(intent, rest, &tokens[dt.len()..], device, value)
                    {
                        *device = Some(i);
                        return true;
                    }
                }
                false
            }
        }
    }
}
