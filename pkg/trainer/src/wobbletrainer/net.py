"""The float exercise-recognition network. Every layer is bias-free."""

from __future__ import annotations

import torch
import torch.nn as nn


class ExerciseNet(nn.Module):
    """Conv(2->20,k9) - pool - Conv(20->20,k9) - pool - FC(940->100) - FC(100->5)."""

    def __init__(self, num_classes: int = 5):
        super().__init__()
        self.conv1 = nn.Conv1d(2, 20, 9, bias=False)
        self.conv2 = nn.Conv1d(20, 20, 9, bias=False)
        self.pool = nn.MaxPool1d(2)
        self.fc1 = nn.Linear(20 * 47, 100, bias=False)
        self.fc2 = nn.Linear(100, num_classes, bias=False)
        self.relu = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.relu(self.conv1(x)))
        x = self.pool(self.relu(self.conv2(x)))
        x = torch.flatten(x, 1)
        x = self.relu(self.fc1(x))
        return self.fc2(x)

    def activations(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        """Per-stage outputs at the points the integer pipeline requantizes."""
        a1 = self.relu(self.conv1(x))
        p1 = self.pool(a1)
        a2 = self.relu(self.conv2(p1))
        p2 = self.pool(a2)
        flat = torch.flatten(p2, 1)
        a3 = self.relu(self.fc1(flat))
        logits = self.fc2(a3)
        return {"conv1": a1, "conv2": a2, "fc1": a3, "fc2": logits}
