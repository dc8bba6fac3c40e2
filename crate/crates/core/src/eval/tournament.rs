//! Pairwise-judge tournaments: single elimination for best-of-N selection and double
//! elimination for turning pairwise verdicts into pointwise scores.
//!
//! Candidates are identified by their input index. Every match shows the pair in an order
//! drawn from the seed before the round is played, so rounds can run in parallel and a
//! replay of `match_log` reproduces the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::judge::{JudgeError, PairwiseJudge};
use crate::preference::Choice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub a: usize,
    pub b: usize,
    pub winner: usize,
    /// True when `b` was shown to the judge as response A.
    pub swapped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TournamentResult {
    pub winner: usize,
    pub ranking: Vec<usize>,
    /// Match wins, indexed by candidate.
    pub pointwise_scores: Vec<u32>,
    pub match_log: Vec<MatchRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TournamentError {
    #[error("need at least {needed} candidates, got {got}")]
    TooFewCandidates { needed: usize, got: usize },
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

struct Arena<'a> {
    query: &'a str,
    candidates: &'a [String],
    judge: &'a dyn PairwiseJudge,
    rng: ChaCha8Rng,
    log: Vec<MatchRecord>,
    wins: Vec<u32>,
}

impl<'a> Arena<'a> {
    fn new(
        query: &'a str,
        candidates: &'a [String],
        judge: &'a dyn PairwiseJudge,
        seed: u64,
    ) -> Self {
        Arena {
            query,
            candidates,
            judge,
            rng: ChaCha8Rng::seed_from_u64(seed),
            log: Vec::new(),
            wins: vec![0; candidates.len()],
        }
    }

    /// Play independent matches; returns the winner of each pair, in order.
    fn play_round(&mut self, pairs: &[(usize, usize)]) -> Result<Vec<usize>, JudgeError> {
        let swaps: Vec<bool> = pairs.iter().map(|_| self.rng.gen_bool(0.5)).collect();
        let (query, candidates, judge) = (self.query, self.candidates, self.judge);
        let winners = pairs
            .par_iter()
            .zip(&swaps)
            .map(|(&(a, b), &swapped)| {
                let (first, second) = if swapped { (b, a) } else { (a, b) };
                let verdict = judge
                    .judge(query, &candidates[first], &candidates[second])
                    .map_err(|e| e.context(format!("match {a} vs {b}")))?;
                Ok(match verdict.choice {
                    Choice::A => first,
                    Choice::B => second,
                })
            })
            .collect::<Result<Vec<usize>, JudgeError>>()?;
        for ((&(a, b), &swapped), &winner) in pairs.iter().zip(&swaps).zip(&winners) {
            self.wins[winner] += 1;
            self.log.push(MatchRecord {
                a,
                b,
                winner,
                swapped,
            });
        }
        Ok(winners)
    }
}

/// Pair up `entrants` in order. With an odd count the first entrant sits out.
fn pair_up(entrants: &[usize]) -> (Option<usize>, Vec<(usize, usize)>) {
    let (bye, rest) = if entrants.len() % 2 == 1 {
        (Some(entrants[0]), &entrants[1..])
    } else {
        (None, entrants)
    };
    (bye, rest.chunks(2).map(|p| (p[0], p[1])).collect())
}

/// Rank by elimination time (later is better), then wins, then input order.
fn rank(champion: usize, eliminated_at: &[usize], wins: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..wins.len()).filter(|&c| c != champion).collect();
    order.sort_by(|&x, &y| {
        eliminated_at[y]
            .cmp(&eliminated_at[x])
            .then(wins[y].cmp(&wins[x]))
            .then(x.cmp(&y))
    });
    let mut ranking = vec![champion];
    ranking.extend(order);
    ranking
}

/// Single-elimination bracket over the candidates; the final's winner is the pick.
pub fn bon_select(
    query: &str,
    candidates: &[String],
    judge: &dyn PairwiseJudge,
    seed: u64,
) -> Result<TournamentResult, TournamentError> {
    if candidates.is_empty() {
        return Err(TournamentError::TooFewCandidates { needed: 1, got: 0 });
    }
    let mut arena = Arena::new(query, candidates, judge, seed);
    let mut eliminated_at = vec![usize::MAX; candidates.len()];
    let mut alive: Vec<usize> = (0..candidates.len()).collect();
    let mut round = 0;
    while alive.len() > 1 {
        let (bye, pairs) = pair_up(&alive);
        let winners = arena.play_round(&pairs)?;
        for (&(a, b), &w) in pairs.iter().zip(&winners) {
            eliminated_at[if w == a { b } else { a }] = round;
        }
        alive = bye.into_iter().chain(winners).collect();
        round += 1;
    }
    let winner = alive[0];
    Ok(TournamentResult {
        winner,
        ranking: rank(winner, &eliminated_at, &arena.wins),
        pointwise_scores: arena.wins,
        match_log: arena.log,
    })
}

/// Double elimination: a candidate is out after its second loss. The winners-bracket
/// champion meets the losers-bracket champion in a grand final; if the latter wins, the
/// bracket resets and one more match decides. Scores are total match wins.
pub fn double_elimination(
    query: &str,
    candidates: &[String],
    judge: &dyn PairwiseJudge,
    seed: u64,
) -> Result<TournamentResult, TournamentError> {
    if candidates.len() < 2 {
        return Err(TournamentError::TooFewCandidates {
            needed: 2,
            got: candidates.len(),
        });
    }
    let mut arena = Arena::new(query, candidates, judge, seed);
    let mut eliminated_at = vec![usize::MAX; candidates.len()];
    let mut winners_bracket: Vec<usize> = (0..candidates.len()).collect();
    let mut losers_bracket: Vec<usize> = Vec::new();
    let mut round = 0;
    while winners_bracket.len() > 1 || losers_bracket.len() > 1 {
        if winners_bracket.len() > 1 {
            let (bye, pairs) = pair_up(&winners_bracket);
            let winners = arena.play_round(&pairs)?;
            for (&(a, b), &w) in pairs.iter().zip(&winners) {
                losers_bracket.push(if w == a { b } else { a });
            }
            winners_bracket = bye.into_iter().chain(winners).collect();
        }
        if losers_bracket.len() > 1 {
            let (bye, pairs) = pair_up(&losers_bracket);
            let winners = arena.play_round(&pairs)?;
            for (&(a, b), &w) in pairs.iter().zip(&winners) {
                eliminated_at[if w == a { b } else { a }] = round;
            }
            losers_bracket = bye.into_iter().chain(winners).collect();
        }
        round += 1;
    }
    let upper = winners_bracket[0];
    let champion = match losers_bracket.first() {
        None => upper,
        Some(&lower) => {
            let first = arena.play_round(&[(upper, lower)])?[0];
            let champion = if first == upper {
                upper
            } else {
                arena.play_round(&[(upper, lower)])?[0]
            };
            eliminated_at[if champion == upper { lower } else { upper }] = round;
            champion
        }
    };
    Ok(TournamentResult {
        winner: champion,
        ranking: rank(champion, &eliminated_at, &arena.wins),
        pointwise_scores: arena.wins,
        match_log: arena.log,
    })
}
