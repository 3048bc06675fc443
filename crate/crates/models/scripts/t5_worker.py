#!/usr/bin/env python3
"""T5 question generator speaking the JSON-lines worker protocol.

Usage: t5_worker.py [model_name_or_path]   (default: t5-small)

Requires torch and transformers. Requests arrive one per line on stdin;
each gets exactly one JSON line on stdout.
"""
import json
import random
import sys


def reply(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


class Worker:
    def __init__(self, base):
        import torch
        from transformers import AutoTokenizer, T5ForConditionalGeneration

        self.torch = torch
        self.base = base
        self.tokenizer = AutoTokenizer.from_pretrained(base)
        self.model = T5ForConditionalGeneration.from_pretrained(base)
        self.cls = T5ForConditionalGeneration

    def train(self, pairs, config, checkpoint):
        torch = self.torch
        seed = int(config.get("seed", 0))
        random.seed(seed)
        torch.manual_seed(seed)
        model = self.model
        model.train()
        opt = torch.optim.AdamW(model.parameters(), lr=config["learning_rate"], weight_decay=0.0)
        warmup = int(config.get("warmup_steps", 0))
        step = 0
        log = []
        order = list(range(len(pairs)))
        bs = int(config["batch_size"])
        for _ in range(int(config["epochs"])):
            random.shuffle(order)
            total = 0.0
            for i in range(0, len(order), bs):
                batch = [pairs[j] for j in order[i : i + bs]]
                enc = self.tokenizer([b[0] for b in batch], return_tensors="pt", padding=True, truncation=True)
                labels = self.tokenizer([b[1] for b in batch], return_tensors="pt", padding=True, truncation=True).input_ids
                labels[labels == self.tokenizer.pad_token_id] = -100
                if warmup > 0:
                    for g in opt.param_groups:
                        g["lr"] = config["learning_rate"] * min(1.0, (step + 1) / warmup)
                loss = model(**enc, labels=labels).loss
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), config["clip"])
                opt.step()
                step += 1
                total += loss.item() * len(batch)
            log.append(total / len(pairs))
        model.save_pretrained(checkpoint)
        self.tokenizer.save_pretrained(checkpoint)
        return {"epoch_loss": log}

    def load(self, checkpoint):
        self.model = self.cls.from_pretrained(checkpoint)

    def generate(self, text, beam):
        self.model.eval()
        enc = self.tokenizer([text], return_tensors="pt")
        with self.torch.no_grad():
            out = self.model.generate(
                **enc,
                num_beams=beam,
                num_return_sequences=beam,
                max_length=64,
                length_penalty=1.0,
                output_scores=True,
                return_dict_in_generate=True,
            )
        texts = self.tokenizer.batch_decode(out.sequences, skip_special_tokens=True)
        scores = out.sequences_scores.tolist()
        return [{"question": t, "score": s} for t, s in zip(texts, scores)]


def main():
    worker = Worker(sys.argv[1] if len(sys.argv) > 1 else "t5-small")
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            op = req["op"]
            if op == "train":
                reply({"ok": True, **worker.train(req["pairs"], req["config"], req["checkpoint"])})
            elif op == "load":
                worker.load(req["checkpoint"])
                reply({"ok": True})
            elif op == "generate":
                reply({"ok": True, "candidates": worker.generate(req["input"], int(req["beam"]))})
            else:
                reply({"ok": False, "error": "unknown op " + op})
        except Exception as e:  # reported to the caller, worker keeps running
            reply({"ok": False, "error": repr(e)})


if __name__ == "__main__":
    main()
