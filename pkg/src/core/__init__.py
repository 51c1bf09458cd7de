# Core modules for the Whisper Prompt Toolkit
