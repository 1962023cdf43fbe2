from __future__ import annotations

from django.dispatch import Signal

pre_step = Signal()
post_step = Signal()
checkpoint_saved = Signal()
