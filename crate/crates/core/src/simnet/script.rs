//! Scenario script parser.
//!
//! Line-oriented; `#` starts a comment outside double quotes. Quoted tokens
//! may contain spaces and `\"`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::consent::Quiz;
use crate::exchange::parse_store;
use crate::policy::RecordCategory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ScriptError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    OrgAdd {
        id: String,
    },
    PractitionerAdd {
        id: String,
        org: String,
    },
    PatientAdd {
        id: String,
        home: Option<String>,
        true_identifier: Option<String>,
    },
    ResearcherAdd {
        id: String,
        home: Option<String>,
    },
    ParticipantAdd {
        id: String,
        home: Option<String>,
    },
    PlanCreate {
        plan: String,
        patient: String,
        orgs: Vec<String>,
    },
    Bind {
        practitioner: String,
        plan: String,
    },
    Grant {
        patient: String,
        plan: String,
        practitioner: String,
        scope: Vec<RecordCategory>,
        from: u64,
        until: u64,
    },
    Revoke {
        patient: String,
        grant: String,
    },
    Request {
        practitioner: String,
        org: String,
        sender: String,
        patient: String,
        category: RecordCategory,
        emergency: bool,
    },
    RecordAdd {
        org: String,
        patient: String,
        category: RecordCategory,
        at: u64,
        value: String,
        author: String,
    },
    StoreLoad {
        path: String,
    },
    Timeline {
        practitioner: String,
        window: Option<(u64, u64)>,
    },
    StudyRegister {
        researcher: String,
        study: String,
        quiz_path: String,
    },
    Invite {
        researcher: String,
        study: String,
        participant: String,
    },
    Attempt {
        participant: String,
        study: String,
        answers: Vec<usize>,
    },
    Sign {
        participant: String,
        study: String,
    },
    Withdraw {
        participant: String,
        study: String,
    },
    Profile {
        participant: String,
        descriptors: Vec<String>,
        discoverable: bool,
        overrides: Vec<(String, bool)>,
    },
    Match {
        researcher: String,
        descriptors: Vec<String>,
        study: Option<String>,
    },
    Fault {
        org: String,
        up: bool,
    },
    Tick {
        ms: u64,
    },
    Shred {
        org: String,
        patient: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptLine {
    pub line: usize,
    pub command: Command,
}

/// Parsed script plus the contents of files it references, keyed by the
/// path as written.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub lines: Vec<ScriptLine>,
    pub files: BTreeMap<String, String>,
}

fn tokenize(text: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        match chars.peek() {
            None | Some('#') => return Ok(out),
            Some('"') => {
                chars.next();
                let mut tok = String::new();
                loop {
                    match chars.next() {
                        None => return Err("unterminated quote".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(c @ ('"' | '\\')) => tok.push(c),
                            _ => return Err("bad escape in quoted token".into()),
                        },
                        Some(c) => tok.push(c),
                    }
                }
                if chars.peek().is_some_and(|c| !c.is_whitespace()) {
                    return Err("quoted token must be followed by whitespace".into());
                }
                out.push(tok);
            }
            Some(_) => {
                let mut tok = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    tok.push(c);
                    chars.next();
                }
                out.push(tok);
            }
        }
    }
}

fn num(s: &str, what: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("{what} must be a non-negative integer, got {s:?}"))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn category(s: &str) -> Result<RecordCategory, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn list(s: &str) -> Vec<String> {
    s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect()
}

fn arity(t: &[String], min: usize, max: usize, usage: &str) -> Result<(), String> {
    if t.len() < min || t.len() > max {
        return Err(format!("usage: {usage}"));
    }
    Ok(())
}

fn parse_command(t: &[String]) -> Result<Command, String> {
    let words: Vec<&str> = t.iter().map(String::as_str).collect();
    let s = |i: usize| t[i].clone();
    let opt = |i: usize| t.get(i).cloned();
    Ok(match words.as_slice() {
        ["org", "add", ..] => {
            arity(t, 3, 3, "org add <id>")?;
            Command::OrgAdd { id: s(2) }
        }
        ["practitioner", "add", ..] => {
            arity(t, 4, 4, "practitioner add <id> <org>")?;
            Command::PractitionerAdd { id: s(2), org: s(3) }
        }
        ["patient", "add", ..] => {
            arity(t, 3, 5, "patient add <id> [<home-org> [<true-identifier>]]")?;
            Command::PatientAdd {
                id: s(2),
                home: opt(3),
                true_identifier: opt(4),
            }
        }
        ["researcher", "add", ..] => {
            arity(t, 3, 4, "researcher add <id> [<home-org>]")?;
            Command::ResearcherAdd { id: s(2), home: opt(3) }
        }
        ["participant", "add", ..] => {
            arity(t, 3, 4, "participant add <id> [<home-org>]")?;
            Command::ParticipantAdd { id: s(2), home: opt(3) }
        }
        ["plan", "create", ..] => {
            if t.len() < 5 {
                return Err("usage: plan create <plan> <patient> <org>...".into());
            }
            Command::PlanCreate {
                plan: s(2),
                patient: s(3),
                orgs: t[4..].to_vec(),
            }
        }
        ["bind", ..] => {
            arity(t, 3, 3, "bind <practitioner> <plan>")?;
            Command::Bind {
                practitioner: s(1),
                plan: s(2),
            }
        }
        ["grant", ..] => {
            arity(t, 7, 7, "grant <patient> <plan> <practitioner> <cat,...> <from> <until>")?;
            Command::Grant {
                patient: s(1),
                plan: s(2),
                practitioner: s(3),
                scope: list(&t[4]).iter().map(|c| category(c)).collect::<Result<_, _>>()?,
                from: num(&t[5], "from")?,
                until: num(&t[6], "until")?,
            }
        }
        ["revoke", ..] => {
            arity(t, 3, 3, "revoke <patient> <grant>")?;
            Command::Revoke {
                patient: s(1),
                grant: s(2),
            }
        }
        ["request", ..] => {
            arity(t, 5, 6, "request <practitioner>@<org> <sender_org> <patient> <cat> [emergency]")?;
            let (practitioner, org) = t[1]
                .split_once('@')
                .ok_or("requester must be written <practitioner>@<org>")?;
            let emergency = match t.get(5).map(String::as_str) {
                None => false,
                Some("emergency") => true,
                Some(other) => return Err(format!("expected 'emergency', got {other:?}")),
            };
            Command::Request {
                practitioner: practitioner.to_string(),
                org: org.to_string(),
                sender: s(2),
                patient: s(3),
                category: category(&t[4])?,
                emergency,
            }
        }
        ["record", "add", ..] => {
            arity(t, 8, 8, "record add <org> <patient> <cat> <t> <value> <author>")?;
            Command::RecordAdd {
                org: s(2),
                patient: s(3),
                category: category(&t[4])?,
                at: num(&t[5], "t")?,
                value: s(6),
                author: s(7),
            }
        }
        ["store", "load", ..] => {
            arity(t, 3, 3, "store load <path>")?;
            Command::StoreLoad { path: s(2) }
        }
        ["timeline", ..] => {
            if t.len() != 2 && t.len() != 4 {
                return Err("usage: timeline <practitioner> [<from> <to>]".into());
            }
            let window = if t.len() == 4 {
                Some((num(&t[2], "from")?, num(&t[3], "to")?))
            } else {
                None
            };
            Command::Timeline {
                practitioner: s(1),
                window,
            }
        }
        ["study", "register", ..] => {
            arity(t, 5, 5, "study register <researcher> <study> <quizfile>")?;
            Command::StudyRegister {
                researcher: s(2),
                study: s(3),
                quiz_path: s(4),
            }
        }
        ["invite", ..] => {
            arity(t, 4, 4, "invite <researcher> <study> <participant>")?;
            Command::Invite {
                researcher: s(1),
                study: s(2),
                participant: s(3),
            }
        }
        ["attempt", ..] => {
            arity(t, 4, 4, "attempt <participant> <study> <a,...>")?;
            Command::Attempt {
                participant: s(1),
                study: s(2),
                answers: list(&t[3])
                    .iter()
                    .map(|a| num(a, "answer").map(|v| v as usize))
                    .collect::<Result<_, _>>()?,
            }
        }
        ["sign", ..] => {
            arity(t, 3, 3, "sign <participant> <study>")?;
            Command::Sign {
                participant: s(1),
                study: s(2),
            }
        }
        ["withdraw", ..] => {
            arity(t, 3, 3, "withdraw <participant> <study>")?;
            Command::Withdraw {
                participant: s(1),
                study: s(2),
            }
        }
        ["profile", ..] => {
            if t.len() < 4 {
                return Err("usage: profile <participant> <desc,...> <discoverable> [<study>=<bool>...]".into());
            }
            let overrides = t[4..]
                .iter()
                .map(|o| {
                    let (study, v) = o.split_once('=').ok_or(format!("expected <study>=<bool>, got {o:?}"))?;
                    Ok((study.to_string(), boolean(v)?))
                })
                .collect::<Result<_, String>>()?;
            Command::Profile {
                participant: s(1),
                descriptors: list(&t[2]),
                discoverable: boolean(&t[3])?,
                overrides,
            }
        }
        ["match", ..] => {
            arity(t, 3, 4, "match <researcher> <desc,...> [<study>]")?;
            Command::Match {
                researcher: s(1),
                descriptors: list(&t[2]),
                study: opt(3),
            }
        }
        ["fault", ..] => {
            arity(t, 3, 3, "fault <org> down|up")?;
            let up = match words[2] {
                "down" => false,
                "up" => true,
                other => return Err(format!("expected down or up, got {other:?}")),
            };
            Command::Fault { org: s(1), up }
        }
        ["tick", ..] => {
            arity(t, 2, 2, "tick <ms>")?;
            Command::Tick { ms: num(&t[1], "ms")? }
        }
        ["shred", ..] => {
            arity(t, 3, 3, "shred <org> <patient>")?;
            Command::Shred {
                org: s(1),
                patient: s(2),
            }
        }
        [first, ..] => return Err(format!("unknown command {first:?}")),
        [] => unreachable!("blank lines are skipped"),
    })
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg| ScriptError { line, msg };
            let tokens = tokenize(raw).map_err(err)?;
            if tokens.is_empty() {
                continue;
            }
            let command = parse_command(&tokens).map_err(err)?;
            lines.push(ScriptLine { line, command });
        }
        Ok(Script {
            lines,
            files: BTreeMap::new(),
        })
    }

    /// Paths referenced by quiz and store commands, with their lines.
    pub fn references(&self) -> Vec<(usize, &str)> {
        self.lines
            .iter()
            .filter_map(|l| match &l.command {
                Command::StudyRegister { quiz_path, .. } => Some((l.line, quiz_path.as_str())),
                Command::StoreLoad { path } => Some((l.line, path.as_str())),
                _ => None,
            })
            .collect()
    }

    /// Supplies the contents of a referenced file.
    pub fn attach(&mut self, path: impl Into<String>, contents: impl Into<String>) {
        self.files.insert(path.into(), contents.into());
    }

    /// Parses the script at `path` and reads every referenced file relative
    /// to the script's directory. Referenced quizzes and stores are parsed
    /// here so that malformed inputs fail before anything runs.
    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = fs::read_to_string(path).map_err(|e| ScriptError {
            line: 0,
            msg: format!("{}: {e}", path.display()),
        })?;
        let mut script = Script::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let refs: Vec<(usize, String)> = script.references().into_iter().map(|(l, p)| (l, p.to_string())).collect();
        for (line, rel) in refs {
            let contents = fs::read_to_string(base.join(&rel)).map_err(|e| ScriptError {
                line,
                msg: format!("{rel}: {e}"),
            })?;
            script.attach(rel, contents);
        }
        script.check_files()?;
        Ok(script)
    }

    pub fn check_files(&self) -> Result<(), ScriptError> {
        for l in &self.lines {
            let err = |msg: String| ScriptError { line: l.line, msg };
            match &l.command {
                Command::StudyRegister { quiz_path, .. } => {
                    let text = self.files.get(quiz_path).ok_or_else(|| err(format!("{quiz_path}: not loaded")))?;
                    Quiz::parse(text).map_err(|e| err(format!("{quiz_path}: {e}")))?;
                }
                Command::StoreLoad { path } => {
                    let text = self.files.get(path).ok_or_else(|| err(format!("{path}: not loaded")))?;
                    parse_store(text).map_err(|e| err(format!("{path}: {e}")))?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_handles_quotes_and_comments() {
        assert_eq!(
            tokenize(r#"record add hospital p001 vitals 10 "BP 132/85" doc # note"#).unwrap(),
            ["record", "add", "hospital", "p001", "vitals", "10", "BP 132/85", "doc"]
        );
        assert_eq!(tokenize(r#"x "a \"b\" c""#).unwrap(), ["x", "a \"b\" c"]);
        assert_eq!(tokenize(r#"x "a # b""#).unwrap(), ["x", "a # b"]);
        assert!(tokenize(r#"x "open"#).is_err());
        assert!(tokenize("   # only a comment").unwrap().is_empty());
    }

    #[test]
    fn parses_every_command() {
        let text = r#"
org add hospital
practitioner add nurse1 homecare
patient add p001 hospital "Jan Jansen"
researcher add r1
participant add px homecare
plan create plan1 p001 hospital homecare
bind nurse1 plan1
grant p001 plan1 nurse1 vitals,notes 0 3600000
revoke p001 g1
request nurse1@homecare hospital p001 vitals emergency
record add hospital p001 vitals 10 "BP 132/85" doc1
store load records.tsv
timeline nurse1 0 100
study register r1 s1 quiz.txt
invite r1 s1 px
attempt px s1 0,1,1
sign px s1
withdraw px s1
profile px biobank:lifelines,registry:x true s1=false
match r1 biobank:lifelines s1
fault hospital down
tick 500
shred hospital p001
"#;
        let s = Script::parse(text).unwrap();
        assert_eq!(s.lines.len(), 23);
        assert_eq!(s.lines[0].line, 2);
        assert_eq!(
            s.lines[9].command,
            Command::Request {
                practitioner: "nurse1".into(),
                org: "homecare".into(),
                sender: "hospital".into(),
                patient: "p001".into(),
                category: RecordCategory::Vitals,
                emergency: true,
            }
        );
        assert_eq!(
            s.lines[18].command,
            Command::Profile {
                participant: "px".into(),
                descriptors: vec!["biobank:lifelines".into(), "registry:x".into()],
                discoverable: true,
                overrides: vec![("s1".into(), false)],
            }
        );
        assert_eq!(s.references(), [(13, "records.tsv"), (15, "quiz.txt")]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Script::parse("org add a\n\nfrobnicate\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = Script::parse("request nurse hospital p001 vitals").unwrap_err();
        assert!(e.msg.contains("@"));
        let e = Script::parse("grant p plan n xray 0 1").unwrap_err();
        assert!(e.msg.contains("xray"));
        let e = Script::parse("tick -5").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn missing_files_are_reported() {
        let mut s = Script::parse("study register r1 s1 quiz.txt").unwrap();
        assert_eq!(s.check_files().unwrap_err().line, 1);
        s.attach("quiz.txt", "Q a\nC x\nC y\nA 0\n");
        s.check_files().unwrap();
        s.attach("quiz.txt", "Q a\n");
        assert!(s.check_files().is_err());
    }
}
