use std::fmt;

use thiserror::Error;

use crate::ledger::codec::Writer;
use crate::ledger::Digest;

const MAX_TEXT_LEN: usize = 4096;
const MIN_CHOICES: usize = 2;
const MAX_CHOICES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuizError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("quiz has no questions")]
    Empty,
    #[error("question {question} has {count} choices, expected {MIN_CHOICES} to {MAX_CHOICES}")]
    ChoiceCount { question: usize, count: usize },
    #[error("question {question}: answer index {answer} out of range")]
    AnswerOutOfRange { question: usize, answer: usize },
    #[error("question {question}: text longer than {MAX_TEXT_LEN} bytes")]
    TextTooLong { question: usize },
    #[error("expected {expected} answers, got {got}")]
    AnswerCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub prompt: String,
    pub choices: Vec<String>,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quiz {
    pub questions: Vec<Question>,
    /// Mistakes tolerated on a passing attempt.
    pub max_mistakes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grade {
    pub mistakes: u32,
    pub passed: bool,
    /// Indices of the questions answered wrongly.
    pub wrong: Vec<usize>,
}

impl Quiz {
    pub fn new(questions: Vec<Question>) -> Result<Self, QuizError> {
        let quiz = Quiz {
            questions,
            max_mistakes: 0,
        };
        quiz.validate()?;
        Ok(quiz)
    }

    pub fn validate(&self) -> Result<(), QuizError> {
        if self.questions.is_empty() {
            return Err(QuizError::Empty);
        }
        for (question, q) in self.questions.iter().enumerate() {
            if !(MIN_CHOICES..=MAX_CHOICES).contains(&q.choices.len()) {
                return Err(QuizError::ChoiceCount {
                    question,
                    count: q.choices.len(),
                });
            }
            if q.answer >= q.choices.len() {
                return Err(QuizError::AnswerOutOfRange {
                    question,
                    answer: q.answer,
                });
            }
            if q.prompt.len() > MAX_TEXT_LEN || q.choices.iter().any(|c| c.len() > MAX_TEXT_LEN) {
                return Err(QuizError::TextTooLong { question });
            }
        }
        Ok(())
    }

    /// `Q <prompt>`, then `C <choice>` lines, then `A <index>` (0-based).
    pub fn parse(text: &str) -> Result<Self, QuizError> {
        let mut questions: Vec<Question> = Vec::new();
        let mut open: Option<(String, Vec<String>)> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: &str| QuizError::Parse {
                line,
                msg: msg.to_string(),
            };
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (tag, rest) = t.split_once(char::is_whitespace).unwrap_or((t, ""));
            let rest = rest.trim();
            match tag {
                "Q" => {
                    if open.is_some() {
                        return Err(err("previous question has no answer line"));
                    }
                    if rest.is_empty() {
                        return Err(err("empty prompt"));
                    }
                    open = Some((rest.to_string(), Vec::new()));
                }
                "C" => match open.as_mut() {
                    Some((_, choices)) => choices.push(rest.to_string()),
                    None => return Err(err("choice outside a question")),
                },
                "A" => {
                    let (prompt, choices) = open.take().ok_or_else(|| err("answer outside a question"))?;
                    let answer = rest.parse().map_err(|_| err("answer must be a choice index"))?;
                    questions.push(Question {
                        prompt,
                        choices,
                        answer,
                    });
                }
                _ => return Err(err("expected Q, C or A")),
            }
        }
        if open.is_some() {
            return Err(QuizError::Parse {
                line: text.lines().count(),
                msg: "last question has no answer line".into(),
            });
        }
        Quiz::new(questions)
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.max_mistakes);
        w.count(self.questions.len());
        for q in &self.questions {
            w.str("prompt", &q.prompt, MAX_TEXT_LEN).expect("validated");
            w.count(q.choices.len());
            for c in &q.choices {
                w.str("choice", c, MAX_TEXT_LEN).expect("validated");
            }
            w.u32(q.answer as u32);
        }
        w.into_bytes()
    }

    /// Digest committed on chain when the study is registered.
    pub fn hash(&self) -> Digest {
        Digest::of(&self.encode())
    }

    pub fn grade(&self, answers: &[usize]) -> Result<Grade, QuizError> {
        if answers.len() != self.questions.len() {
            return Err(QuizError::AnswerCount {
                expected: self.questions.len(),
                got: answers.len(),
            });
        }
        let wrong: Vec<usize> = self
            .questions
            .iter()
            .zip(answers)
            .enumerate()
            .filter(|(_, (q, &a))| q.answer != a)
            .map(|(i, _)| i)
            .collect();
        let mistakes = wrong.len() as u32;
        Ok(Grade {
            mistakes,
            passed: mistakes <= self.max_mistakes,
            wrong,
        })
    }
}

impl fmt::Display for Quiz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in &self.questions {
            writeln!(f, "Q {}", q.prompt)?;
            for c in &q.choices {
                writeln!(f, "C {c}")?;
            }
            writeln!(f, "A {}", q.answer)?;
        }
        Ok(())
    }
}
