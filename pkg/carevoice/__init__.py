# Copyright (C) 2025 carevoice contributors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Speech pipeline for recorded clinical visits: diarization, transcripts,
SOAP notes, illness scores and vocal biomarkers, plus the cohort statistics
that compare them with patient outcomes.
"""

__version__ = "0.1.0"

from carevoice.config import CareVoiceConfig, load_config
from carevoice.core import InputMode, VisitManifest
from carevoice.errors import CareVoiceError
